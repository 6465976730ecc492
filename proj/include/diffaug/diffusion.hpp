#pragma once

#include <cstdint>
#include <functional>

#include "diffaug/image.hpp"
#include "diffaug/schedules.hpp"

namespace diffaug {

/// A standard-normal draw shaped like its target image.
struct NoiseDraw {
  Tensor epsilon;
  std::uint64_t seed = 0;
};

NoiseDraw make_noise(const Shape& shape, std::uint64_t seed);

/// Maps (x_t, t) to a prediction of the clean image x_0 of identical shape.
using DenoiserFn = std::function<ImageTensor(const ImageTensor&, int)>;

/// Reverse-process variance at step t.
enum class ReverseVariance {
  kBeta,       // beta_t, as written for the reverse kernel
  kPosterior,  // (1 - abar_{t-1}) / (1 - abar_t) * beta_t
};

/// Normal density N(x; mu, sigma). Throws std::domain_error for sigma <= 0.
Real gaussian_pdf(Real x, Real mu, Real sigma);

/// One forward step: sqrt(1 - beta_t) * x_prev + sqrt(beta_t) * eps.
ImageTensor q_step(const ImageTensor& x_prev, int t, const VarianceSchedule& s,
                   std::uint64_t rng_seed);

/// Closed-form forward marginal: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.
ImageTensor q_sample(const ImageTensor& x0, int t, const VarianceSchedule& s,
                     const NoiseDraw& noise);

/// Batched q_sample over (n, c, h, w) with one timestep per sample.
Tensor q_sample_batch(const Tensor& x0, std::span<const int> t,
                      const VarianceSchedule& s, const Tensor& epsilon);

/// Coefficients (c0, ct) of the Gaussian posterior mean
/// mu = c0 * x0_pred + ct * x_t.
std::pair<Real, Real> posterior_mean_coefficients(const VarianceSchedule& s, int t);

/// One reverse step from x_t to x_{t-1}. No noise is added at t == 1.
ImageTensor p_step(const ImageTensor& x_t, int t, const VarianceSchedule& s,
                   const DenoiserFn& denoiser, std::uint64_t rng_seed,
                   ReverseVariance variance = ReverseVariance::kBeta);

/// Ancestral sampling from x_T ~ N(0, I) down to t = 1; result clamped to
/// [-1, 1].
ImageTensor sample(const VarianceSchedule& s, int channels, int height, int width,
                   const DenoiserFn& denoiser, std::uint64_t rng_seed,
                   ReverseVariance variance = ReverseVariance::kBeta);

/// Mean absolute error between x0 and its prediction.
Real diffusion_loss(const ImageTensor& x0, const ImageTensor& x0_pred);

}  // namespace diffaug
