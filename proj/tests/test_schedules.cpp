#include <stdexcept>
#include <cmath>
#include <random>

#include "doctest.h"
#include "diffaug/schedules.hpp"

using namespace diffaug;

TEST_CASE("linear schedule examples") {
  auto s = make_linear_schedule(4, 0.1, 0.4);
  REQUIRE(s.T() == 4);
  const std::vector<Real> expected{0.1, 0.2, 0.3, 0.4};
  for (int i = 0; i < 4; ++i) CHECK(s.betas()[i] == doctest::Approx(expected[i]).epsilon(1e-15));
  CHECK(s.betas().front() == 0.1);
  CHECK(s.betas().back() == 0.4);

  auto one = make_linear_schedule(1, 0.5, 0.5);
  REQUIRE(one.T() == 1);
  CHECK(one.betas()[0] == 0.5);
  CHECK(one.alpha_bars()[0] == 0.5);

  auto two = make_linear_schedule(2, 0.1, 0.2);
  CHECK(two.alpha_bars()[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(two.alpha_bars()[1] == doctest::Approx(0.72).epsilon(1e-15));
}

TEST_CASE("schedule accessors are one-based") {
  auto s = make_linear_schedule(3, 0.1, 0.3);
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.beta(1) == s.betas()[0]);
  CHECK(s.alpha(3) == s.alphas()[2]);
  CHECK_THROWS_AS(s.beta(0), std::out_of_range);
  CHECK_THROWS_AS(s.beta(4), std::out_of_range);
  CHECK_THROWS_AS(s.check_timestep(-1), std::out_of_range);
  CHECK(s.posterior_variance(1) == 0.0);
  CHECK(s.posterior_variance(2) ==
        doctest::Approx((1 - s.alpha_bar(1)) / (1 - s.alpha_bar(2)) * s.beta(2)));
}

TEST_CASE("invalid schedule parameters name the parameter") {
  auto message = [](auto&& f) {
    try {
      f();
    } catch (const std::domain_error& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message([] { make_linear_schedule(0, 0.1, 0.2); }).find("T") != std::string::npos);
  CHECK(message([] { make_linear_schedule(5, 0.0, 0.2); }).find("beta_start") != std::string::npos);
  CHECK(message([] { make_linear_schedule(5, 0.3, 0.2); }).find("beta_start") != std::string::npos);
  CHECK(message([] { make_linear_schedule(5, 0.1, 1.0); }).find("beta_end") != std::string::npos);
  CHECK_THROWS_AS(VarianceSchedule({0.1, 1.0}), std::domain_error);
  CHECK_THROWS_AS(VarianceSchedule({}), std::domain_error);
}

TEST_CASE("signal to noise") {
  auto half = VarianceSchedule({0.5});
  CHECK(signal_to_noise(half, 1) == doctest::Approx(1.0));
  CHECK_THROWS_AS(signal_to_noise(half, 2), std::out_of_range);
  CHECK_THROWS_AS(signal_to_noise(half, 0), std::out_of_range);

  // Oracle: cumulative product computed here, in log space.
  const int T = 1000;
  Real log_ab = 0.0;
  for (int i = 0; i < T; ++i) log_ab += std::log1p(-(1e-4 + (0.02 - 1e-4) * i / (T - 1)));
  const Real ab = std::exp(log_ab);
  auto s = make_linear_schedule(T, 1e-4, 0.02);
  CHECK(s.alpha_bar(T) == doctest::Approx(ab).epsilon(1e-10));
  CHECK(signal_to_noise(s, T) == doctest::Approx(ab / (1 - ab)).epsilon(1e-10));
  CHECK(signal_to_noise(s, T) < 1e-4);
  for (int t = 2; t <= T; ++t) CHECK(signal_to_noise(s, t) < signal_to_noise(s, t - 1));
}

TEST_CASE("random valid schedules satisfy the invariants") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<Real> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const int T = std::uniform_int_distribution<int>(1, 400)(rng);
    Real a = 1e-6 + u(rng) * 0.5, b = 1e-6 + u(rng) * 0.99;
    if (a > b) std::swap(a, b);
    auto s = make_linear_schedule(T, a, b);
    REQUIRE(s.T() == T);
    REQUIRE(s.betas().size() == static_cast<std::size_t>(T));
    REQUIRE(s.alphas().size() == static_cast<std::size_t>(T));
    REQUIRE(s.alpha_bars().size() == static_cast<std::size_t>(T));
    CHECK(s.alpha_bars()[0] == 1.0 - s.betas()[0]);
    for (int i = 0; i < T; ++i) {
      CHECK(s.betas()[i] > 0.0);
      CHECK(s.betas()[i] < 1.0);
      CHECK(s.alphas()[i] == 1.0 - s.betas()[i]);
      if (i > 0) {
        CHECK(s.betas()[i] >= s.betas()[i - 1]);
        CHECK(s.alpha_bars()[i] < s.alpha_bars()[i - 1]);
        const Real expect = s.alpha_bars()[i - 1] * s.alphas()[i];
        CHECK(std::abs(s.alpha_bars()[i] - expect) <= 1e-12 * expect);
        CHECK(signal_to_noise(s, i + 1) < signal_to_noise(s, i));
      }
    }
    CHECK(s.alpha_bars().back() > 0.0);
    CHECK(s.alpha_bars().front() < 1.0);
  }
}
