#pragma once

#include <vector>

#include "diffaug/tensor.hpp"

namespace diffaug {

/// Diffusion variance schedule with precomputed per-step coefficients.
///
/// Timesteps are 1-based: t = 1..T. Index 0 stands for the clean image, so
/// alpha_bar(0) is defined as 1. Immutable after construction.
class VarianceSchedule {
 public:
  /// Validates 0 < beta < 1 for every entry and derives alphas and their
  /// cumulative products.
  explicit VarianceSchedule(std::vector<Real> betas);

  int T() const { return static_cast<int>(betas_.size()); }

  const std::vector<Real>& betas() const { return betas_; }
  const std::vector<Real>& alphas() const { return alphas_; }
  const std::vector<Real>& alpha_bars() const { return alpha_bars_; }

  Real beta(int t) const;
  Real alpha(int t) const;
  /// Cumulative product of alphas up to t; alpha_bar(0) == 1.
  Real alpha_bar(int t) const;
  /// (1 - alpha_bar(t-1)) / (1 - alpha_bar(t)) * beta(t).
  Real posterior_variance(int t) const;

  /// Throws std::out_of_range unless 1 <= t <= T.
  void check_timestep(int t) const;

  friend bool operator==(const VarianceSchedule&, const VarianceSchedule&) = default;

 private:
  std::vector<Real> betas_;
  std::vector<Real> alphas_;
  std::vector<Real> alpha_bars_;
};

/// Betas evenly spaced from beta_start to beta_end inclusive.
VarianceSchedule make_linear_schedule(int T, Real beta_start, Real beta_end);

/// alpha_bar(t) / (1 - alpha_bar(t)).
Real signal_to_noise(const VarianceSchedule& s, int t);

}  // namespace diffaug
