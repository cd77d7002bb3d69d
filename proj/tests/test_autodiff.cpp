#include <doctest.h>

#include <cmath>
#include <numbers>

#include "pairrank/autodiff/adam.hpp"
#include "pairrank/autodiff/gradcheck.hpp"
#include "pairrank/autodiff/ops.hpp"
#include "pairrank/util/rng.hpp"
#include "reference.hpp"

using namespace pairrank;
using ad::Tensor;

namespace {

Tensor random_tensor(ad::Shape shape, Rng& rng, bool requires_grad = true, double away_from_zero = 0.0) {
  std::vector<double> v(ad::shape_numel(shape));
  for (auto& x : v) {
    x = rng.normal();
    if (away_from_zero > 0.0 && std::abs(x) < away_from_zero) x = x < 0 ? x - away_from_zero : x + away_from_zero;
  }
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// Weighted sum with fixed random weights, so every output coordinate matters.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(y.numel());
  for (auto& v : w) v = rng.normal();
  const auto flat = y.reshape({1, y.numel()});
  return ad::linear(flat, Tensor::from({1, y.numel()}, std::move(w)));
}

}  // namespace

TEST_CASE("conv2d identity 1x1 kernel returns input") {
  const auto x = Tensor::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const auto k = Tensor::from({1, 1, 1, 1}, {1.0});
  const auto y = ad::conv2d(x, k, 1, 0);
  CHECK(y.shape() == ad::Shape{1, 1, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv2d diagonal kernel on 2x2 input sums the diagonal") {
  const auto x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  const auto k = Tensor::from({1, 1, 2, 2}, {1, 0, 0, 1});
  const auto y = ad::conv2d(x, k, 1, 0);
  REQUIRE(y.shape() == ad::Shape{1, 1, 1, 1});
  CHECK(y[0] == 5.0);
}

TEST_CASE("conv2d matches nested-loop reference") {
  Rng rng(11);
  struct Case { std::size_t n, c, h, w, o, k; int stride, pad; };
  const Case cases[] = {{2, 4, 8, 8, 3, 3, 1, 1}, {2, 4, 8, 8, 5, 3, 2, 1}, {1, 3, 7, 5, 2, 1, 2, 0},
                        {2, 2, 8, 8, 4, 1, 1, 0}, {1, 1, 6, 6, 2, 3, 1, 0}, {2, 4, 5, 7, 2, 2, 3, 2}};
  for (const auto& cs : cases) {
    const auto x = random_tensor({cs.n, cs.c, cs.h, cs.w}, rng, false);
    const auto k = random_tensor({cs.o, cs.c, cs.k, cs.k}, rng, false);
    std::size_t oh = 0, ow = 0;
    const auto ref = testing::conv2d_reference({x.data().begin(), x.data().end()}, cs.n, cs.c, cs.h, cs.w,
                                               {k.data().begin(), k.data().end()}, cs.o, cs.k, cs.k, cs.stride,
                                               cs.pad, oh, ow);
    const auto y = ad::conv2d(x, k, cs.stride, cs.pad);
    REQUIRE(y.shape() == ad::Shape{cs.n, cs.o, oh, ow});
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y[i] - ref[i]) <= 1e-12);
  }
}

TEST_CASE("conv2d rejects channel mismatch with a descriptive error") {
  const auto x = Tensor::zeros({1, 3, 5, 5});
  const auto k = Tensor::zeros({2, 2, 3, 3});
  CHECK_THROWS_WITH_AS(ad::conv2d(x, k, 1, 1), doctest::Contains("channels"), ad::ShapeError);
  CHECK_THROWS_AS(ad::conv2d(Tensor::zeros({1, 2, 5, 5}), k, 0, 1), ad::ShapeError);
  CHECK_THROWS_AS(ad::conv2d(Tensor::zeros({1, 2, 5, 5}), k, 1, -1), ad::ShapeError);
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(3);
  for (const auto& [stride, pad, ksize] : {std::tuple{1, 1, 3}, std::tuple{2, 1, 3}, std::tuple{2, 0, 1}}) {
    const auto x = random_tensor({2, 3, 6, 6}, rng);
    const auto k = random_tensor({4, 3, static_cast<std::size_t>(ksize), static_cast<std::size_t>(ksize)}, rng);
    const auto report = ad::finite_difference_check(
        [&, s = stride, p = pad](std::span<const Tensor> in) { return probe(ad::conv2d(in[0], in[1], s, p), 5); },
        {x, k});
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("relu forward and gradient") {
  const auto y = ad::relu(Tensor::from({3}, {-1.0, 0.0, 2.0}));
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 2.0);
  const auto pos = Tensor::from({3}, {0.5, 1.0, 3.0});
  const auto same = ad::relu(pos);
  for (std::size_t i = 0; i < 3; ++i) CHECK(same[i] == pos[i]);

  // Subgradient at exactly 0 is 0.
  auto z = Tensor::from({1}, {0.0}, true);
  ad::backward(ad::sum(ad::relu(z)));
  CHECK(z.grad()[0] == 0.0);

  Rng rng(4);
  const auto x = random_tensor({2, 3, 4}, rng, true, 0.05);
  const auto report =
      ad::finite_difference_check([](std::span<const Tensor> in) { return probe(ad::relu(in[0]), 9); }, {x});
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("channel_norm edge cases") {
  auto scale = Tensor::full({2}, 1.0, true);
  auto shift = Tensor::zeros({2}, true);
  const auto constant = Tensor::full({1, 2, 3, 3}, 4.2);
  auto stats = ad::RunningStats::identity(2);
  const auto y = ad::channel_norm(constant, scale, shift, ad::NormMode::kTrain, &stats);
  for (const double v : y.data()) CHECK(v == 0.0);
  // Running averages moved by momentum 0.1 towards the batch statistics.
  CHECK(stats.mean[0] == doctest::Approx(0.42).epsilon(1e-12));
  CHECK(stats.var[0] == doctest::Approx(0.9).epsilon(1e-12));

  Rng rng(5);
  const auto x = random_tensor({2, 2, 3, 3}, rng, false);
  const auto zero_scale = Tensor::zeros({2});
  const auto offsets = Tensor::from({2}, {0.25, -1.5});
  const auto shifted = ad::channel_norm(x, zero_scale, offsets, ad::NormMode::kTrain, nullptr);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 9; ++i) CHECK(shifted[(n * 2 + c) * 9 + i] == offsets[c]);

  CHECK_THROWS_AS(ad::channel_norm(x, Tensor::zeros({3}), offsets, ad::NormMode::kTrain, nullptr), ad::ShapeError);
  CHECK_THROWS(ad::channel_norm(x, scale, shift, ad::NormMode::kInfer, nullptr));
}

TEST_CASE("channel_norm gradients in train and infer mode") {
  Rng rng(6);
  const auto x = random_tensor({2, 4, 5, 5}, rng);
  const auto gamma = random_tensor({4}, rng);
  const auto beta = random_tensor({4}, rng);
  const auto train = ad::finite_difference_check(
      [](std::span<const Tensor> in) {
        return probe(ad::channel_norm(in[0], in[1], in[2], ad::NormMode::kTrain, nullptr), 1);
      },
      {x, gamma, beta});
  CHECK(train.max_rel_error < 1e-4);

  ad::RunningStats stats{{0.1, -0.2, 0.3, 0.0}, {0.5, 1.5, 2.0, 0.8}};
  const auto infer = ad::finite_difference_check(
      [&](std::span<const Tensor> in) {
        return probe(ad::channel_norm(in[0], in[1], in[2], ad::NormMode::kInfer, &stats), 2);
      },
      {x, gamma, beta});
  CHECK(infer.max_rel_error < 1e-4);
}

TEST_CASE("global_avg_pool") {
  const auto y = ad::global_avg_pool(Tensor::from({1, 2, 2, 2}, {1, 3, 5, 7, 2, 2, 2, 2}));
  REQUIRE(y.shape() == ad::Shape{1, 2});
  CHECK(y[0] == 4.0);
  CHECK(y[1] == 2.0);

  auto x = Tensor::from({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6}, true);
  ad::backward(ad::sum(ad::global_avg_pool(x)));
  for (const double g : x.grad()) CHECK(g == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("linear homogeneity, identity and gradients") {
  const auto w = Tensor::from({2, 2}, {0.3, -1.2, 2.0, 0.7});
  const auto zero = ad::linear(Tensor::zeros({3, 2}), w);
  for (const double v : zero.data()) CHECK(v == 0.0);
  const auto x = Tensor::from({2, 2}, {1.5, -2.0, 0.25, 4.0});
  const auto same = ad::linear(x, Tensor::from({2, 2}, {1, 0, 0, 1}));
  for (std::size_t i = 0; i < 4; ++i) CHECK(same[i] == x[i]);
  CHECK_THROWS_AS(ad::linear(Tensor::zeros({1, 3}), w), ad::ShapeError);

  Rng rng(7);
  const auto xs = random_tensor({3, 4}, rng);
  const auto ws = random_tensor({2, 4}, rng);
  const auto bs = random_tensor({2}, rng);
  const auto report = ad::finite_difference_check(
      [](std::span<const Tensor> in) { return probe(ad::linear(in[0], in[1], in[2]), 4); }, {xs, ws, bs});
  CHECK(report.max_rel_error < 1e-9);  // exact up to roundoff for a linear map
}

TEST_CASE("sigmoid and losses") {
  CHECK(ad::sigmoid(0.0) == 0.5);
  CHECK(ad::sigmoid(Tensor::scalar(0.0))[0] == 0.5);
  CHECK(ad::sigmoid(50.0) > 1.0 - 1e-9);
  CHECK(ad::sigmoid(-800.0) >= 0.0);
  const auto p = Tensor::from({3}, {0.2, -1.0, 4.0});
  CHECK(ad::mse_loss(p, p).item() == 0.0);
  CHECK(ad::bce_with_logits_loss(Tensor::scalar(0.0), Tensor::scalar(1.0)).item() ==
        doctest::Approx(std::numbers::ln2).epsilon(1e-15));
  // Stable for large logits.
  CHECK(std::isfinite(ad::bce_with_logits_loss(Tensor::scalar(-1000.0), Tensor::scalar(1.0)).item()));
  CHECK_THROWS(ad::bce_with_logits_loss(Tensor::scalar(0.0), Tensor::scalar(2.0)));

  Rng rng(8);
  const auto z = random_tensor({6}, rng);
  const auto labels = Tensor::from({6}, {1, 0, 1, 1, 0, 0});
  const auto bce = ad::finite_difference_check(
      [&](std::span<const Tensor> in) { return ad::bce_with_logits_loss(in[0], labels); }, {z});
  CHECK(bce.max_rel_error < 1e-6);
  const auto target = random_tensor({6}, rng);
  const auto mse = ad::finite_difference_check(
      [](std::span<const Tensor> in) { return ad::mse_loss(in[0], in[1]); }, {z, target});
  CHECK(mse.max_rel_error < 1e-6);
  const auto sig = ad::finite_difference_check(
      [](std::span<const Tensor> in) { return probe(ad::sigmoid(in[0]), 3); }, {z});
  CHECK(sig.max_rel_error < 1e-6);
}

TEST_CASE("gather/sub/add/scale gradients") {
  Rng rng(9);
  const auto x = random_tensor({4, 3}, rng);
  const std::vector<std::size_t> a{0, 2, 2, 3}, b{1, 0, 3, 3};
  const auto report = ad::finite_difference_check(
      [&](std::span<const Tensor> in) {
        const auto d = ad::sub(ad::gather_rows(in[0], a), ad::gather_rows(in[0], b));
        return probe(ad::add(ad::scale(d, 1.5), ad::gather_rows(in[0], b)), 6);
      },
      {x});
  CHECK(report.max_rel_error < 1e-8);
}

TEST_CASE("backward basics") {
  auto x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  ad::backward(ad::sum(x));
  for (const double g : x.grad()) CHECK(g == 1.0);
  // A second backward without reset accumulates.
  ad::backward(ad::sum(x));
  for (const double g : x.grad()) CHECK(g == 2.0);

  CHECK_THROWS_AS(ad::backward(ad::relu(x)), ad::ShapeError);

  // mse(w.x, y) has gradient 2 (w.x - y) x / N with respect to w.
  auto w = Tensor::from({1, 3}, {0.5, -1.0, 2.0}, true);
  const auto inputs = Tensor::from({2, 3}, {1, 2, 3, -1, 0.5, 2});
  const std::vector<double> y{1.0, -2.0};
  ad::backward(ad::mse_loss(ad::linear(inputs, w), Tensor::from({2, 1}, y)));
  for (std::size_t j = 0; j < 3; ++j) {
    double expected = 0.0;
    for (std::size_t n = 0; n < 2; ++n) {
      const double pred = w[0] * inputs[n * 3] + w[1] * inputs[n * 3 + 1] + w[2] * inputs[n * 3 + 2];
      expected += 2.0 * (pred - y[n]) * inputs[n * 3 + j] / 2.0;
    }
    CHECK(w.grad()[j] == doctest::Approx(expected).epsilon(1e-14));
  }
}

TEST_CASE("gradient of a sum of losses equals the sum of separate gradients") {
  Rng rng(10);
  auto x = random_tensor({2, 2, 5, 5}, rng, true);
  auto k = random_tensor({3, 2, 3, 3}, rng, true);
  auto loss1 = [&] { return ad::sum(probe(ad::relu(ad::conv2d(x, k, 1, 1)), 1)); };
  auto loss2 = [&] { return ad::sum(ad::global_avg_pool(ad::conv2d(x, k, 2, 1))); };
  ad::backward(ad::add(loss1(), loss2()));
  const std::vector<double> joint(k.grad().begin(), k.grad().end());
  k.zero_grad();
  ad::backward(loss1());
  ad::backward(loss2());
  for (std::size_t i = 0; i < joint.size(); ++i) CHECK(std::abs(joint[i] - k.grad()[i]) <= 1e-10);
}

TEST_CASE("no-grad guard and non-finite detection") {
  auto x = Tensor::from({2}, {1.0, 2.0}, true);
  {
    ad::NoGradGuard guard;
    CHECK_FALSE(ad::relu(x).requires_grad());
  }
  CHECK(ad::relu(x).requires_grad());
  const auto huge = Tensor::from({1, 1}, {1e308});
  CHECK_THROWS_AS(ad::linear(huge, Tensor::from({1, 1}, {1e10})), ad::NonFiniteError);
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  std::vector<Tensor> params{Tensor::from({3}, {1.0, -2.0, 0.5}, true)};
  params[0].mutable_grad();
  auto state = ad::AdamState::for_params(params);
  for (int i = 0; i < 3; ++i) ad::adam_step(params, state, 0.1);
  CHECK(params[0][0] == 1.0);
  CHECK(params[0][1] == -2.0);
  CHECK(params[0][2] == 0.5);
  CHECK(state.step == 3);
}

TEST_CASE("adam first step moves by lr against the gradient sign") {
  std::vector<Tensor> params{Tensor::from({3}, {1.0, 1.0, 1.0}, true)};
  const std::vector<double> g{0.3, -7.0, 1e-3};
  std::copy(g.begin(), g.end(), params[0].mutable_grad().begin());
  auto state = ad::AdamState::for_params(params);
  ad::adam_step(params, state, 0.01);
  for (std::size_t i = 0; i < 3; ++i) {
    const double step = params[0][i] - 1.0;
    CHECK(step * g[i] < 0.0);
    CHECK(std::abs(step) == doctest::Approx(0.01).epsilon(1e-4));
  }
}

TEST_CASE("adam two steps match a scalar reference") {
  const double lr = 0.05, g = 0.8, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double theta = 2.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    theta -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
  }
  std::vector<Tensor> params{Tensor::from({1}, {2.0}, true)};
  params[0].mutable_grad()[0] = g;
  auto state = ad::AdamState::for_params(params);
  ad::adam_step(params, state, lr);
  ad::adam_step(params, state, lr);
  CHECK(params[0][0] == doctest::Approx(theta).epsilon(1e-15));
  CHECK(state.step == 2);
}

TEST_CASE("finite-difference harness") {
  Rng rng(12);
  SUBCASE("linear op is exact up to roundoff") {
    const auto x = random_tensor({2, 5}, rng);
    const auto w = random_tensor({3, 5}, rng);
    const auto r = ad::finite_difference_check(
        [](std::span<const Tensor> in) { return probe(ad::linear(in[0], in[1]), 1); }, {x, w});
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-9);
  }
  SUBCASE("conv + relu + pool composition") {
    const auto x = random_tensor({2, 2, 6, 6}, rng);
    const auto k = random_tensor({3, 2, 3, 3}, rng);
    const auto r = ad::finite_difference_check(
        [](std::span<const Tensor> in) {
          return probe(ad::global_avg_pool(ad::relu(ad::conv2d(in[0], in[1], 1, 1))), 2);
        },
        {x, k}, {.eps = 1e-5, .tol = 1e-4});
    CHECK(r.passed);
  }
  SUBCASE("corrupted backward is caught") {
    const auto x = random_tensor({4}, rng);
    auto broken = [](std::span<const Tensor> in) {
      const Tensor& t = in[0];
      std::vector<double> out(t.numel());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = 3.0 * t[i];
      const auto y = ad::make_result("broken_scale", t.shape(), std::move(out), {t}, [](ad::detail::Node& self) {
        auto& d = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += 2.9 * self.grad[i];  // should be 3
      });
      return ad::sum(y);
    };
    const auto r = ad::finite_difference_check(broken, {x});
    CHECK_FALSE(r.passed);
    CHECK(r.max_rel_error > 1e-2);
  }
}
