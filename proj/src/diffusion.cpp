#include "diffaug/diffusion.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "diffaug/errors.hpp"
#include "diffaug/random.hpp"

namespace diffaug {

namespace {

void require_diffusion_space(const ImageTensor& x, const char* what) {
  if (x.range == ValueRange::kUnit) {
    throw std::domain_error(std::string(what) +
                            ": expected a [-1, 1] image, got a [0, 1] image");
  }
}

}  // namespace

NoiseDraw make_noise(const Shape& shape, std::uint64_t seed) {
  return NoiseDraw{randn(shape, seed), seed};
}

Real gaussian_pdf(Real x, Real mu, Real sigma) {
  if (!(sigma > 0.0)) {
    throw std::domain_error("gaussian_pdf: sigma = " + std::to_string(sigma) +
                            " must be > 0");
  }
  const Real z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

ImageTensor q_step(const ImageTensor& x_prev, int t, const VarianceSchedule& s,
                   std::uint64_t rng_seed) {
  require_diffusion_space(x_prev, "q_step");
  const Real beta = s.beta(t);
  const Tensor eps = randn(x_prev.shape(), rng_seed);
  require_same_shape(eps.shape(), x_prev.shape(), "q_step noise");
  const Real keep = std::sqrt(1.0 - beta);
  const Real sd = std::sqrt(beta);
  ImageTensor out(x_prev.pixels, ValueRange::kUnbounded);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = keep * x_prev.pixels[i] + sd * eps[i];
  }
  return out;
}

ImageTensor q_sample(const ImageTensor& x0, int t, const VarianceSchedule& s,
                     const NoiseDraw& noise) {
  require_same_shape(noise.epsilon.shape(), x0.shape(), "q_sample noise");
  const int ts[1] = {t};
  return ImageTensor(q_sample_batch(x0.pixels, ts, s, noise.epsilon),
                     ValueRange::kUnbounded);
}

Tensor q_sample_batch(const Tensor& x0, std::span<const int> t,
                      const VarianceSchedule& s, const Tensor& epsilon) {
  require_same_shape(epsilon.shape(), x0.shape(), "q_sample noise");
  const Shape sh = x0.shape();
  if (static_cast<int>(t.size()) != sh.n) {
    throw ShapeError("q_sample_batch: " + std::to_string(t.size()) +
                     " timesteps for batch of " + std::to_string(sh.n));
  }
  Tensor out(sh);
  const std::size_t per = static_cast<std::size_t>(sh.c) * sh.h * sh.w;
  for (int n = 0; n < sh.n; ++n) {
    s.check_timestep(t[n]);
    const Real ab = s.alpha_bar(t[n]);
    const Real a = std::sqrt(ab);
    const Real b = std::sqrt(1.0 - ab);
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
      out[i] = a * x0[i] + b * epsilon[i];
    }
  }
  return out;
}

std::pair<Real, Real> posterior_mean_coefficients(const VarianceSchedule& s, int t) {
  const Real ab_t = s.alpha_bar(t);
  const Real ab_prev = s.alpha_bar(t - 1);
  const Real beta = s.beta(t);
  const Real denom = 1.0 - ab_t;
  return {std::sqrt(ab_prev) * beta / denom,
          std::sqrt(s.alpha(t)) * (1.0 - ab_prev) / denom};
}

ImageTensor p_step(const ImageTensor& x_t, int t, const VarianceSchedule& s,
                   const DenoiserFn& denoiser, std::uint64_t rng_seed,
                   ReverseVariance variance) {
  s.check_timestep(t);
  const ImageTensor x0_pred = denoiser(x_t, t);
  if (!(x0_pred.shape() == x_t.shape())) {
    throw ShapeError("p_step: denoiser returned " + x0_pred.shape().str() +
                     " for input " + x_t.shape().str());
  }
  const auto [c0, ct] = posterior_mean_coefficients(s, t);
  ImageTensor out(x_t.pixels, ValueRange::kUnbounded);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = c0 * x0_pred.pixels[i] + ct * x_t.pixels[i];
  }
  if (t > 1) {
    const Real var =
        variance == ReverseVariance::kBeta ? s.beta(t) : s.posterior_variance(t);
    const Real sd = std::sqrt(var);
    const Tensor eps = randn(x_t.shape(), rng_seed);
    for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] += sd * eps[i];
  }
  return out;
}

ImageTensor sample(const VarianceSchedule& s, int channels, int height, int width,
                   const DenoiserFn& denoiser, std::uint64_t rng_seed,
                   ReverseVariance variance) {
  const Shape shape{1, channels, height, width};
  ImageTensor x(randn(shape, derive_seed(rng_seed, 0)), ValueRange::kUnbounded);
  for (int t = s.T(); t >= 1; --t) {
    x = p_step(x, t, s, denoiser, derive_seed(rng_seed, static_cast<std::uint64_t>(t)),
               variance);
  }
  return x.clamped(ValueRange::kSymmetric);
}

Real diffusion_loss(const ImageTensor& x0, const ImageTensor& x0_pred) {
  require_same_shape(x0.shape(), x0_pred.shape(), "diffusion_loss");
  const std::size_t n = x0.pixels.size();
  if (n == 0) return 0.0;
  Real total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += std::abs(x0.pixels[i] - x0_pred.pixels[i]);
  return total / static_cast<Real>(n);
}

}  // namespace diffaug
