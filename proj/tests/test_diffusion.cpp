#include <stdexcept>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "diffaug/diffusion.hpp"
#include "diffaug/errors.hpp"
#include "diffaug/random.hpp"

using namespace diffaug;

namespace {

ImageTensor image_of(std::vector<Real> v, int c, int h, int w, ValueRange r = ValueRange::kSymmetric) {
  return ImageTensor(Tensor({1, c, h, w}, std::move(v)), r);
}

ImageTensor random_image(int c, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<Real> u(-1.0, 1.0);
  Tensor t({1, c, h, w});
  for (auto& v : t.span()) v = u(rng);
  return ImageTensor(t, ValueRange::kSymmetric);
}

}  // namespace

TEST_CASE("gaussian pdf") {
  CHECK(gaussian_pdf(0, 0, 1) == doctest::Approx(1.0 / std::sqrt(2 * std::numbers::pi)).epsilon(1e-14));
  CHECK(gaussian_pdf(0, 0, 1) == doctest::Approx(0.3989422804).epsilon(1e-10));
  for (Real mu : {-3.0, 0.0, 2.5}) {
    for (Real sigma : {0.1, 1.0, 4.0}) {
      CHECK(gaussian_pdf(mu, mu, sigma) == doctest::Approx(1 / (sigma * std::sqrt(2 * std::numbers::pi))));
      // Offsets exactly representable at these magnitudes.
      CHECK(gaussian_pdf(mu + 0.75, mu, sigma) == gaussian_pdf(mu - 0.75, mu, sigma));
    }
  }
  CHECK_THROWS_AS(gaussian_pdf(0, 0, 0), std::domain_error);
  CHECK_THROWS_AS(gaussian_pdf(0, 0, -1), std::domain_error);
}

TEST_CASE("q_step") {
  auto x = random_image(3, 4, 4, 1);
  // beta close enough to zero that sqrt(beta) * eps vanishes in double.
  VarianceSchedule tiny({1e-320});
  CHECK(q_step(x, 1, tiny, 5).pixels == x.pixels);

  auto s = make_linear_schedule(10, 0.01, 0.2);
  CHECK(q_step(x, 3, s, 42).pixels == q_step(x, 3, s, 42).pixels);
  CHECK_FALSE(q_step(x, 3, s, 42).pixels == q_step(x, 3, s, 43).pixels);
  CHECK_THROWS_AS(q_step(x, 0, s, 1), std::out_of_range);
  CHECK_THROWS_AS(q_step(x, 11, s, 1), std::out_of_range);
  CHECK_THROWS_AS(q_step(ImageTensor::filled(1, 2, 2, 0.5, ValueRange::kUnit), 1, s, 1),
                  std::domain_error);

  // beta -> 1 from a zero image: output is standard normal.
  VarianceSchedule full({1.0 - 1e-16});
  auto zero = ImageTensor::filled(1, 1, 1, 0.0, ValueRange::kSymmetric);
  const int n = 10000;
  Real sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const Real v = q_step(zero, 1, full, derive_seed(99, i)).pixels[0];
    sum += v;
    sq += v * v;
  }
  const Real mean = sum / n, var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 3 * std::sqrt(1.0 / n));
  CHECK(std::abs(var - 1.0) < 3 * std::sqrt(2.0 / n));
}

TEST_CASE("q_sample") {
  auto x0 = random_image(2, 3, 3, 2);
  VarianceSchedule tiny({1e-320, 1e-320});
  NoiseDraw zero{Tensor(x0.shape(), 0.0), 0};
  CHECK(q_sample(x0, 2, tiny, zero).pixels == x0.pixels);

  auto s = make_linear_schedule(20, 0.01, 0.3);
  auto noise = make_noise(x0.shape(), 7);
  auto z = ImageTensor::filled(2, 3, 3, 0.0, ValueRange::kSymmetric);
  auto xt = q_sample(z, 9, s, noise);
  for (std::size_t i = 0; i < xt.pixels.size(); ++i) {
    CHECK(xt.pixels[i] == doctest::Approx(std::sqrt(1 - s.alpha_bar(9)) * noise.epsilon[i]));
  }
  CHECK(q_sample(x0, 9, s, noise).pixels == q_sample(x0, 9, s, noise).pixels);
  CHECK_THROWS_AS(q_sample(x0, 9, s, make_noise({1, 1, 3, 3}, 1)), ShapeError);
  CHECK_THROWS_AS(q_sample(x0, 21, s, noise), std::out_of_range);

  const int ts[2] = {1, 2};
  CHECK_THROWS_AS(q_sample_batch(x0.pixels, ts, s, noise.epsilon), ShapeError);
}

TEST_CASE("q_sample moments match the closed form") {
  auto s = make_linear_schedule(10, 0.02, 0.3);
  auto x0 = random_image(1, 2, 2, 3);
  const int n = 10000, t = 6;
  std::vector<Real> sum(4, 0), sq(4, 0);
  for (int i = 0; i < n; ++i) {
    auto xt = q_sample(x0, t, s, make_noise(x0.shape(), derive_seed(5, i)));
    for (int p = 0; p < 4; ++p) {
      sum[p] += xt.pixels[p];
      sq[p] += xt.pixels[p] * xt.pixels[p];
    }
  }
  const Real var = 1 - s.alpha_bar(t);
  for (int p = 0; p < 4; ++p) {
    const Real mean = sum[p] / n, v = sq[p] / n - mean * mean;
    CHECK(std::abs(mean - std::sqrt(s.alpha_bar(t)) * x0.pixels[p]) < 3 * std::sqrt(var / n));
    CHECK(std::abs(v - var) < 3 * var * std::sqrt(2.0 / (n - 1)));
  }
}

TEST_CASE("posterior mean coefficients by hand") {
  // T = 2, betas (0.1, 0.5): abar = (0.9, 0.45).
  VarianceSchedule s({0.1, 0.5});
  auto [c0, ct] = posterior_mean_coefficients(s, 2);
  CHECK(c0 == doctest::Approx(std::sqrt(0.9) * 0.5 / 0.55).epsilon(1e-14));
  CHECK(ct == doctest::Approx(std::sqrt(0.5) * 0.1 / 0.55).epsilon(1e-14));
  auto [d0, dt] = posterior_mean_coefficients(s, 1);
  CHECK(d0 == doctest::Approx(1.0));
  CHECK(dt == doctest::Approx(0.0));

  // 1-pixel image, constant denoiser c = 0.3, x_2 = 0.8:
  // mu = 0.5 * sqrt(0.9) / 0.55 * 0.3 + sqrt(0.5) * 0.1 / 0.55 * 0.8.
  const Real mu_hand = 0.5 * std::sqrt(0.9) / 0.55 * 0.3 + std::sqrt(0.5) * 0.1 / 0.55 * 0.8;
  DenoiserFn constant = [](const ImageTensor& x, int) {
    return ImageTensor(Tensor(x.shape(), 0.3), ValueRange::kSymmetric);
  };
  auto x2 = image_of({0.8}, 1, 1, 1, ValueRange::kUnbounded);
  const int n = 20000;
  Real sum = 0;
  for (int i = 0; i < n; ++i) sum += p_step(x2, 2, s, constant, derive_seed(17, i)).pixels[0];
  CHECK(std::abs(sum / n - mu_hand) < 3 * std::sqrt(0.5 / n));
}

TEST_CASE("p_step") {
  auto s = make_linear_schedule(5, 0.01, 0.2);
  auto x0 = random_image(1, 3, 3, 4);
  DenoiserFn oracle = [&](const ImageTensor&, int) { return x0; };
  auto x1 = q_sample(x0, 1, s, make_noise(x0.shape(), 1));
  // t = 1 is deterministic and returns the denoiser output.
  auto a = p_step(x1, 1, s, oracle, 1), b = p_step(x1, 1, s, oracle, 2);
  CHECK(a.pixels == b.pixels);
  for (std::size_t i = 0; i < a.pixels.size(); ++i) CHECK(a.pixels[i] == doctest::Approx(x0.pixels[i]));
  CHECK_FALSE(p_step(x1, 3, s, oracle, 1).pixels == p_step(x1, 3, s, oracle, 2).pixels);

  // Vanishing betas with an exact oracle: p_step(x_t) ~ x_t.
  VarianceSchedule tiny({1e-12, 2e-12, 3e-12});
  auto xt = q_sample(x0, 3, tiny, make_noise(x0.shape(), 3));
  auto back = p_step(xt, 3, tiny, oracle, 9);
  for (std::size_t i = 0; i < xt.pixels.size(); ++i) CHECK(back.pixels[i] == doctest::Approx(xt.pixels[i]).epsilon(1e-5));

  DenoiserFn bad = [](const ImageTensor&, int) { return ImageTensor::filled(1, 2, 2, 0, ValueRange::kSymmetric); };
  CHECK_THROWS_AS(p_step(x1, 2, s, bad, 1), ShapeError);
  DenoiserFn failing = [](const ImageTensor&, int) -> ImageTensor { throw std::runtime_error("boom"); };
  CHECK_THROWS_WITH(p_step(x1, 2, s, failing, 1), "boom");
  CHECK_THROWS_AS(p_step(x1, 6, s, oracle, 1), std::out_of_range);

  // Posterior variance option changes only the noise scale.
  auto pb = p_step(x1, 3, s, oracle, 5, ReverseVariance::kBeta);
  auto pp = p_step(x1, 3, s, oracle, 5, ReverseVariance::kPosterior);
  auto mean = p_step(x1, 1, s, oracle, 5);
  (void)mean;
  const auto [c0, ct] = posterior_mean_coefficients(s, 3);
  const Real ratio = std::sqrt(s.posterior_variance(3) / s.beta(3));
  for (std::size_t i = 0; i < pb.pixels.size(); ++i) {
    const Real mu = c0 * x0.pixels[i] + ct * x1.pixels[i];
    CHECK(pp.pixels[i] - mu == doctest::Approx((pb.pixels[i] - mu) * ratio));
  }
}

TEST_CASE("sample") {
  auto s = make_linear_schedule(8, 0.01, 0.3);
  DenoiserFn constant = [](const ImageTensor& x, int) {
    return ImageTensor(Tensor(x.shape(), 0.25), ValueRange::kSymmetric);
  };
  auto a = sample(s, 3, 4, 4, constant, 123);
  auto b = sample(s, 3, 4, 4, constant, 123);
  CHECK(a.pixels == b.pixels);
  CHECK(a.range == ValueRange::kSymmetric);
  CHECK(a.valid());
  // Final step returns the prediction exactly.
  for (Real v : a.pixels.span()) CHECK(v == doctest::Approx(0.25));
  DenoiserFn big = [](const ImageTensor& x, int) {
    return ImageTensor(Tensor(x.shape(), 3.0), ValueRange::kUnbounded);
  };
  const auto clamped = sample(s, 1, 2, 2, big, 5);
  for (Real v : clamped.pixels.span()) CHECK(v == 1.0);

  // Perfect oracle from noised training images recovers x0.
  auto x0 = random_image(3, 4, 4, 8);
  DenoiserFn oracle = [&](const ImageTensor&, int) { return x0; };
  auto t50 = make_linear_schedule(50, 1e-3, 0.3);
  auto rec = sample(t50, 3, 4, 4, oracle, 77);
  CHECK(diffusion_loss(x0, rec) < 0.05);
}

TEST_CASE("diffusion loss") {
  auto x = random_image(2, 3, 3, 9);
  CHECK(diffusion_loss(x, x) == 0.0);
  CHECK(diffusion_loss(ImageTensor::filled(1, 2, 2, 1, ValueRange::kSymmetric),
                       ImageTensor::filled(1, 2, 2, -1, ValueRange::kSymmetric)) == 2.0);
  CHECK(diffusion_loss(image_of({0, 1}, 1, 1, 2), image_of({0.5, 0.5}, 1, 1, 2)) == 0.5);
  CHECK_THROWS_AS(diffusion_loss(x, random_image(1, 3, 3, 1)), ShapeError);
  for (int i = 0; i < 50; ++i) {
    auto a = random_image(1, 3, 3, 100 + i), b = random_image(1, 3, 3, 200 + i),
         c = random_image(1, 3, 3, 300 + i);
    CHECK(diffusion_loss(a, b) == diffusion_loss(b, a));
    CHECK(diffusion_loss(a, b) > 0);
    CHECK(diffusion_loss(a, c) <= diffusion_loss(a, b) + diffusion_loss(b, c) + 1e-15);
  }
}
