#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffaug/autograd.hpp"
#include "diffaug/random.hpp"

namespace diffaug::nn {

struct NamedParameter {
  std::string name;
  ag::Var var;
};

using ParameterList = std::vector<NamedParameter>;

/// Total scalar count across `params`.
std::size_t parameter_count(const ParameterList& params);

/// Flattened copy of every parameter value, in list order.
std::vector<Real> flatten_values(const ParameterList& params);
std::vector<Real> flatten_grads(const ParameterList& params);
void zero_grads(const ParameterList& params);

class Conv2d {
 public:
  Conv2d() = default;
  /// He-normal weights scaled by `gain`; zero bias.
  Conv2d(std::string name, int in_channels, int out_channels, int kernel,
         int stride, Rng& rng, Real gain = 1.0);

  ag::Var operator()(const ag::Var& x) const;
  void collect(ParameterList& out) const;

  int out_channels() const { return weight_.shape().n; }

 private:
  std::string name_;
  ag::Var weight_;
  ag::Var bias_;
  int stride_ = 1;
  int padding_ = 0;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::string name, int in_features, int out_features, Rng& rng,
         Real gain = 1.0);

  ag::Var operator()(const ag::Var& x) const;
  void collect(ParameterList& out) const;

 private:
  std::string name_;
  ag::Var weight_;
  ag::Var bias_;
};

struct AdamConfig {
  Real learning_rate = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real epsilon = 1e-8;
  /// Global gradient-norm clip; <= 0 disables.
  Real clip_norm = 0.0;
};

/// Adaptive-moment optimizer with fixed step size over a parameter list.
class Adam {
 public:
  Adam(ParameterList params, AdamConfig cfg);

  void zero_grad();
  void step();

  std::int64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  /// Moment buffers, for checkpointing.
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void restore(std::int64_t t, std::vector<Tensor> m, std::vector<Tensor> v);

 private:
  ParameterList params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::int64_t t_ = 0;
};

/// Exponential moving average of parameter values. The effective decay
/// warms up as min(decay, (1 + n) / (10 + n)) over the first updates.
class Ema {
 public:
  Ema(ParameterList params, Real decay);

  void update();
  /// Exchange live values and averages.
  void swap();

 private:
  ParameterList params_;
  std::vector<Tensor> avg_;
  Real decay_ = 0.0;
  std::int64_t n_ = 0;
};

}  // namespace diffaug::nn
