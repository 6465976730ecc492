#include "diffaug/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "diffaug/errors.hpp"

namespace diffaug::nn {

std::size_t parameter_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.value().size();
  return n;
}

std::vector<Real> flatten_values(const ParameterList& params) {
  std::vector<Real> out;
  out.reserve(parameter_count(params));
  for (const auto& p : params) {
    const auto s = p.var.value().span();
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

std::vector<Real> flatten_grads(const ParameterList& params) {
  std::vector<Real> out;
  out.reserve(parameter_count(params));
  for (const auto& p : params) {
    const Tensor g = p.var.grad();
    out.insert(out.end(), g.span().begin(), g.span().end());
  }
  return out;
}

void zero_grads(const ParameterList& params) {
  for (const auto& p : params) {
    ag::Var v = p.var;
    v.zero_grad();
  }
}

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel,
               int stride, Rng& rng, Real gain)
    : name_(std::move(name)), stride_(stride), padding_(kernel / 2) {
  Tensor w = randn({out_channels, in_channels, kernel, kernel}, rng);
  w *= gain * std::sqrt(2.0 / (in_channels * kernel * kernel));
  weight_ = ag::Var(std::move(w), true);
  bias_ = ag::Var(Tensor({1, out_channels, 1, 1}, 0.0), true);
}

ag::Var Conv2d::operator()(const ag::Var& x) const {
  return ag::conv2d(x, weight_, bias_, stride_, padding_);
}

void Conv2d::collect(ParameterList& out) const {
  out.push_back({name_ + ".weight", weight_});
  out.push_back({name_ + ".bias", bias_});
}

Linear::Linear(std::string name, int in_features, int out_features, Rng& rng,
               Real gain)
    : name_(std::move(name)) {
  Tensor w = randn({out_features, in_features, 1, 1}, rng);
  w *= gain * std::sqrt(1.0 / in_features);
  weight_ = ag::Var(std::move(w), true);
  bias_ = ag::Var(Tensor({1, out_features, 1, 1}, 0.0), true);
}

ag::Var Linear::operator()(const ag::Var& x) const {
  return ag::linear(x, weight_, bias_);
}

void Linear::collect(ParameterList& out) const {
  out.push_back({name_ + ".weight", weight_});
  out.push_back({name_ + ".bias", bias_});
}

Adam::Adam(ParameterList params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.learning_rate > 0.0)) {
    throw std::domain_error("Adam: learning_rate must be > 0");
  }
  for (const auto& p : params_) {
    m_.emplace_back(p.var.shape(), 0.0);
    v_.emplace_back(p.var.shape(), 0.0);
  }
}

void Adam::zero_grad() { zero_grads(params_); }

void Adam::step() {
  ++t_;
  Real scale = 1.0;
  if (cfg_.clip_norm > 0.0) {
    Real sq = 0.0;
    for (const auto& p : params_) {
      const auto& g = p.var.node()->grad;
      for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
    }
    const Real norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
  }
  const Real bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<Real>(t_));
  const Real bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<Real>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& node = *params_[k].var.node();
    if (node.grad.empty()) continue;  // never reached by the loss
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < node.value.size(); ++i) {
      const Real g = node.grad[i] * scale;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      node.value[i] -= cfg_.learning_rate * (m[i] / bc1) /
                       (std::sqrt(v[i] / bc2) + cfg_.epsilon);
    }
  }
}

Ema::Ema(ParameterList params, Real decay) : params_(std::move(params)), decay_(decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw std::domain_error("Ema: decay must lie in [0, 1)");
  for (const auto& p : params_) avg_.push_back(p.var.value());
}

void Ema::update() {
  ++n_;
  const Real d = std::min(decay_, (1.0 + n_) / (10.0 + n_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const Tensor& v = params_[k].var.value();
    Tensor& a = avg_[k];
    for (std::size_t i = 0; i < v.size(); ++i) a[i] = d * a[i] + (1.0 - d) * v[i];
  }
}

void Ema::swap() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& v = params_[k].var.node()->value;
    for (std::size_t i = 0; i < v.size(); ++i) std::swap(v[i], avg_[k][i]);
  }
}

void Adam::restore(std::int64_t t, std::vector<Tensor> m, std::vector<Tensor> v) {
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw ShapeError("Adam::restore: moment count mismatch");
  }
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace diffaug::nn
