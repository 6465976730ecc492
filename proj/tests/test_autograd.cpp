#include <stdexcept>
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "diffaug/autograd.hpp"
#include "diffaug/errors.hpp"
#include "diffaug/nn.hpp"
#include "diffaug/random.hpp"
#include "oracles.hpp"

using namespace diffaug;

namespace {

ag::Var leaf(Shape s, std::uint64_t seed) { return ag::Var(randn(s, seed), true); }

void check_op(const char* name, const nn::ParameterList& params, const std::function<ag::Var()>& f) {
  CAPTURE(name);
  for (const auto& c : oracle::finite_difference_check(params, f, 12, 3)) {
    CAPTURE(c.analytic);
    CAPTURE(c.numeric);
    CHECK(c.rel_error < 1e-6);
  }
}

}  // namespace

TEST_CASE("elementwise and reduction ops match finite differences") {
  auto a = leaf({2, 3, 2, 2}, 1), b = leaf({2, 3, 2, 2}, 2);
  nn::ParameterList ab{{"a", a}, {"b", b}};
  check_op("add", ab, [&] { return ag::mean(ag::mul(ag::add(a, b), a)); });
  check_op("sub", ab, [&] { return ag::mean(ag::mul(ag::sub(a, b), b)); });
  check_op("scale", ab, [&] { return ag::mean(ag::mul(ag::add_scalar(ag::scale(a, 1.7), 0.3), b)); });
  check_op("silu", ab, [&] { return ag::mean(ag::mul(ag::silu(a), b)); });
  check_op("tanh", ab, [&] { return ag::mean(ag::mul(ag::tanh(a), b)); });
  check_op("sigmoid", ab, [&] { return ag::mean(ag::mul(ag::sigmoid(a), b)); });
  check_op("relu", ab, [&] { return ag::mean(ag::mul(ag::relu(a), b)); });
  check_op("l1", ab, [&] { return ag::l1_mean(a, b); });
  check_op("sum_scalars", ab, [&] {
    const ag::Var t[2] = {ag::mean(ag::mul(a, a)), ag::scale(ag::mean(b), 2.0)};
    return ag::sum_scalars(t);
  });
}

TEST_CASE("structural ops match finite differences") {
  auto x = leaf({2, 2, 4, 4}, 3), w = leaf({3, 2, 3, 3}, 4), bias = leaf({1, 3, 1, 1}, 5);
  auto probe = ag::Var(randn({2, 3, 2, 2}, 6));
  nn::ParameterList p{{"x", x}, {"w", w}, {"b", bias}};
  check_op("conv stride 2", p, [&] { return ag::mean(ag::mul(ag::conv2d(x, w, bias, 2, 1), probe)); });
  auto probe1 = ag::Var(randn({2, 3, 4, 4}, 7));
  check_op("conv stride 1", p, [&] { return ag::mean(ag::mul(ag::conv2d(x, w, bias, 1, 1), probe1)); });

  auto v = leaf({2, 4, 1, 1}, 8), lw = leaf({3, 4, 1, 1}, 9), lb = leaf({1, 3, 1, 1}, 10);
  auto lprobe = ag::Var(randn({2, 3, 1, 1}, 11));
  nn::ParameterList lp{{"v", v}, {"w", lw}, {"b", lb}};
  check_op("linear", lp, [&] { return ag::mean(ag::mul(ag::linear(v, lw, lb), lprobe)); });

  auto cb = leaf({2, 2, 1, 1}, 12);
  auto y = leaf({2, 2, 3, 3}, 13);
  auto cprobe = ag::Var(randn({2, 2, 3, 3}, 14));
  nn::ParameterList cp{{"y", y}, {"cb", cb}};
  check_op("channel bias", cp, [&] { return ag::mean(ag::mul(ag::add_channel_bias(y, cb), cprobe)); });

  auto uprobe = ag::Var(randn({2, 2, 6, 6}, 15));
  check_op("upsample", cp, [&] { return ag::mean(ag::mul(ag::upsample_nearest2x(y), uprobe)); });
  auto cat_probe = ag::Var(randn({2, 4, 3, 3}, 16));
  check_op("concat", cp, [&] { return ag::mean(ag::mul(ag::concat_channels(y, ag::silu(y)), cat_probe)); });
  auto sel_probe = ag::Var(randn({3, 2, 3, 3}, 17));
  check_op("select", cp, [&] { return ag::mean(ag::mul(ag::select_samples(y, {1, 0, 1}), sel_probe)); });
}

TEST_CASE("detach and no-grad stop gradients") {
  auto a = leaf({1, 1, 2, 2}, 1);
  auto loss = ag::mean(ag::mul(ag::detach(a), a));
  ag::backward(loss);
  for (std::size_t i = 0; i < 4; ++i) CHECK(a.grad()[i] == doctest::Approx(a.value()[i] / 4));
  {
    ag::NoGradGuard guard;
    CHECK_FALSE(ag::grad_enabled());
    CHECK_FALSE(ag::mean(ag::mul(a, a)).requires_grad());
  }
  CHECK(ag::grad_enabled());
}

TEST_CASE("shape errors") {
  CHECK_THROWS_AS(ag::add(leaf({1, 1, 2, 2}, 1), leaf({1, 1, 2, 3}, 2)), ShapeError);
  CHECK_THROWS_AS(ag::conv2d(leaf({1, 2, 4, 4}, 1), leaf({3, 1, 3, 3}, 2), ag::Var(), 1, 1), ShapeError);
}

TEST_CASE("adam moves parameters against the gradient") {
  auto p = ag::Var(Tensor({1, 1, 1, 2}, {1.0, -1.0}), true);
  nn::Adam opt({{"p", p}}, {0.1});
  for (int i = 0; i < 50; ++i) {
    opt.zero_grad();
    ag::backward(ag::mean(ag::mul(p, p)));
    opt.step();
  }
  CHECK(std::abs(p.value()[0]) < 0.2);
  CHECK(std::abs(p.value()[1]) < 0.2);
  CHECK(opt.steps() == 50);
}

TEST_CASE("ema tracks the warmed-up average and swaps") {
  auto p = ag::Var(Tensor({1, 1, 1, 1}, {0.0}), true);
  nn::Ema ema({{"p", p}}, 0.9);
  Real avg = 0.0;
  for (int n = 1; n <= 20; ++n) {
    p.mutable_value()[0] = static_cast<Real>(n);
    ema.update();
    const Real d = std::min(0.9, (1.0 + n) / (10.0 + n));
    avg = d * avg + (1.0 - d) * n;
  }
  ema.swap();
  CHECK(p.value()[0] == doctest::Approx(avg).epsilon(1e-14));
  ema.swap();
  CHECK(p.value()[0] == 20.0);
  CHECK_THROWS_AS(nn::Ema({{"p", p}}, 1.0), std::domain_error);
}
