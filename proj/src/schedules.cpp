#include "diffaug/schedules.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace diffaug {

VarianceSchedule::VarianceSchedule(std::vector<Real> betas) : betas_(std::move(betas)) {
  if (betas_.empty()) throw std::domain_error("schedule: T must be >= 1");
  alphas_.reserve(betas_.size());
  alpha_bars_.reserve(betas_.size());
  Real running = 1.0;
  for (std::size_t i = 0; i < betas_.size(); ++i) {
    const Real b = betas_[i];
    if (!(b > 0.0 && b < 1.0)) {
      throw std::domain_error("schedule: beta[" + std::to_string(i + 1) + "] = " +
                              std::to_string(b) + " outside (0, 1)");
    }
    alphas_.push_back(1.0 - b);
    running *= alphas_.back();
    alpha_bars_.push_back(running);
  }
}

void VarianceSchedule::check_timestep(int t) const {
  if (t < 1 || t > T()) {
    throw std::out_of_range("timestep t = " + std::to_string(t) +
                            " outside [1, " + std::to_string(T()) + "]");
  }
}

Real VarianceSchedule::beta(int t) const {
  check_timestep(t);
  return betas_[t - 1];
}

Real VarianceSchedule::alpha(int t) const {
  check_timestep(t);
  return alphas_[t - 1];
}

Real VarianceSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  check_timestep(t);
  return alpha_bars_[t - 1];
}

Real VarianceSchedule::posterior_variance(int t) const {
  return (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * beta(t);
}

VarianceSchedule make_linear_schedule(int T, Real beta_start, Real beta_end) {
  if (T < 1) throw std::domain_error("make_linear_schedule: T = " + std::to_string(T) + " must be >= 1");
  if (!(beta_start > 0.0)) {
    throw std::domain_error("make_linear_schedule: beta_start = " +
                            std::to_string(beta_start) + " must be > 0");
  }
  if (!(beta_end < 1.0)) {
    throw std::domain_error("make_linear_schedule: beta_end = " +
                            std::to_string(beta_end) + " must be < 1");
  }
  if (!(beta_start <= beta_end)) {
    throw std::domain_error("make_linear_schedule: beta_start = " +
                            std::to_string(beta_start) + " exceeds beta_end = " +
                            std::to_string(beta_end));
  }
  std::vector<Real> betas(static_cast<std::size_t>(T));
  if (T == 1) {
    betas[0] = beta_start;
  } else {
    const Real step = (beta_end - beta_start) / static_cast<Real>(T - 1);
    for (int i = 0; i < T; ++i) betas[i] = beta_start + step * i;
    betas[T - 1] = beta_end;
  }
  return VarianceSchedule(std::move(betas));
}

Real signal_to_noise(const VarianceSchedule& s, int t) {
  s.check_timestep(t);
  const Real ab = s.alpha_bar(t);
  return ab / (1.0 - ab);
}

}  // namespace diffaug
