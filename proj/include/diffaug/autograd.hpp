#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "diffaug/tensor.hpp"

/// Minimal reverse-mode automatic differentiation over NCHW tensors.
///
/// Every op returns a Var whose node remembers its inputs and a closure that
/// pushes the output gradient back into them. Graph recording is skipped when
/// no input requires a gradient or inside a NoGradGuard scope.
namespace diffaug::ag {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Tensor& g);
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return node_ != nullptr; }

  /// Gradient accumulated by backward(); zeros if nothing flowed here.
  Tensor grad() const;
  void zero_grad();

  Real item() const { return node_->value[0]; }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Builds an op result; records the backward closure only when needed.
Var make_result(Tensor value, std::vector<Var> inputs,
                std::function<void(Node&)> backward_fn);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Back-propagates from a scalar `loss` into every reachable leaf.
void backward(const Var& loss);

// ---- ops ----------------------------------------------------------------

Var constant(Tensor t);
Var detach(const Var& x);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, Real s);
Var add_scalar(const Var& a, Real s);
/// Sum of scalars.
Var sum_scalars(std::span<const Var> terms);

Var silu(const Var& x);
Var relu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);

/// 2-D convolution. weight: (out, in, k, k); bias: (1, out, 1, 1) or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride,
           int padding);
/// Fully connected over (n, features, 1, 1). weight: (out, in, 1, 1).
Var linear(const Var& x, const Var& weight, const Var& bias);
/// x: (n, c, h, w); per_sample_bias: (n, c, 1, 1) broadcast over space.
Var add_channel_bias(const Var& x, const Var& per_sample_bias);
Var upsample_nearest2x(const Var& x);
Var concat_channels(const Var& a, const Var& b);
/// Gathers batch entries `indices` (in that order).
Var select_samples(const Var& x, std::vector<int> indices);

/// Mean absolute difference over all elements.
Var l1_mean(const Var& a, const Var& b);
/// Mean over all elements.
Var mean(const Var& x);

}  // namespace diffaug::ag
