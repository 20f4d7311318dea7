#include <doctest.h>

#include <cmath>

#include "lpad/adam.hpp"
#include "lpad/ops.hpp"
#include "support/gradcheck.hpp"

using namespace lpad;
using testing::GraphD;
using testing::random_tensor;
using testing::VarD;

namespace {

TensorD eval1(const TensorD& x, const std::function<VarD(GraphD&, VarD)>& f) {
  GraphD g;
  return g.value(f(g, g.leaf(x)));
}

// Upsample then pad-1 conv, composed from the two generic ops.
VarD naive_upconv(GraphD& g, VarD x, VarD w) {
  return ops::conv2d(g, ops::upsample_nearest2x(g, x), w, {1, 1, 1});
}

}  // namespace

TEST_CASE("conv2d identity and sum-of-ones") {
  Rng rng(1);
  TensorD x = random_tensor({2, 1, 5, 4}, rng);
  GraphD g;
  auto y = ops::conv2d(g, g.leaf(x), g.constant(TensorD({1, 1, 1, 1}, 1.0)), {});
  CHECK(g.value(y) == x);

  GraphD g2;
  auto s = ops::conv2d(g2, g2.leaf(TensorD({1, 1, 3, 3}, 1.0)), g2.constant(TensorD({1, 1, 3, 3}, 1.0)), {});
  REQUIRE(g2.value(s).shape() == Shape{1, 1, 1, 1});
  CHECK(g2.value(s)[0] == 9.0);
}

TEST_CASE("conv2d shape errors name both shapes") {
  GraphD g;
  auto x = g.leaf(TensorD({1, 2, 5, 5}));
  auto w = g.constant(TensorD({1, 3, 3, 3}));
  try {
    ops::conv2d(g, x, w, {});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1x2x5x5]") != std::string::npos);
    CHECK(msg.find("[1x3x3x3]") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::conv2d(g, g.leaf(TensorD({1, 1, 2, 2})), g.constant(TensorD({1, 1, 3, 3})), {}),
                  ConfigError);
  CHECK(ops::conv_out_extent(6, 3, 1, 8, 8) == 6);
  CHECK(ops::conv_out_extent(64, 3, 2, 1, 1) == 32);
}

TEST_CASE("conv2d gradients at every dilation of the predictor ladder") {
  Rng rng(2);
  for (int d : {1, 2, 4, 8}) {
    CAPTURE(d);
    auto r = testing::check_gradients(
        [d](GraphD& g, const std::vector<VarD>& v) { return ops::conv2d(g, v[0], v[1], {1, d, d}); },
        {random_tensor({2, 2, 6, 6}, rng), random_tensor({2, 2, 3, 3}, rng)}, rng);
    CHECK(r.rel_error < 1e-4);
  }
  auto r = testing::check_gradients(
      [](GraphD& g, const std::vector<VarD>& v) { return ops::conv2d(g, v[0], v[1], {2, 1, 1}); },
      {random_tensor({2, 3, 5, 5}, rng), random_tensor({4, 3, 3, 3}, rng)}, rng);
  CHECK(r.rel_error < 1e-4);
}

TEST_CASE("fused upsample-conv equals upsample followed by conv") {
  Rng rng(3);
  const TensorD x = random_tensor({2, 3, 4, 5}, rng), w = random_tensor({2, 3, 3, 3}, rng);
  GraphD ga, gb;
  auto xa = ga.leaf(x), wa = ga.leaf(w);
  auto fused = ops::upsample_conv3x3(ga, xa, wa);
  auto xb = gb.leaf(x), wb = gb.leaf(w);
  auto naive = naive_upconv(gb, xb, wb);
  const auto& a = ga.value(fused);
  const auto& b = gb.value(naive);
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));

  const TensorD seed = random_tensor(a.shape(), rng);
  ga.backward(fused, seed);
  gb.backward(naive, seed);
  const TensorD gxa = ga.grad(xa), gxb = gb.grad(xb), gwa = ga.grad(wa), gwb = gb.grad(wb);
  for (std::size_t i = 0; i < gxa.size(); ++i) CHECK(gxa[i] == doctest::Approx(gxb[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < gwa.size(); ++i) CHECK(gwa[i] == doctest::Approx(gwb[i]).epsilon(1e-12));
}

TEST_CASE("leaky_relu values and slope gradient") {
  const TensorD y = eval1(TensorD({2}, std::vector<double>{-1.0, 2.0}),
                          [](GraphD& g, VarD x) { return ops::leaky_relu(g, x, 0.2); });
  CHECK(y[0] == doctest::Approx(-0.2));
  CHECK(y[1] == 2.0);
  const TensorD z = eval1(TensorD({3}), [](GraphD& g, VarD x) { return ops::leaky_relu(g, x, 0.2); });
  CHECK(z == TensorD({3}));

  GraphD g;
  auto x = g.leaf(TensorD({1}, -3.0));
  g.backward(ops::leaky_relu(g, x, 0.2));
  CHECK(g.grad(x)[0] == doctest::Approx(0.2));
  CHECK_THROWS_AS(ops::leaky_relu(g, x, 1.5), ConfigError);
}

TEST_CASE("batchnorm standardizes in train mode and passes through in eval") {
  Rng rng(4);
  TensorD x = random_tensor({4, 3, 5, 5}, rng, -2.0, 5.0);
  TensorD rm({3}), rv({3}, 1.0);
  GraphD g;
  const TensorD y = g.value(ops::batchnorm2d(g, g.leaf(x), rm, rv, true));
  for (int c = 0; c < 3; ++c) {
    double m = 0.0, v = 0.0;
    const int n = 4 * 25;
    for (int b = 0; b < 4; ++b)
      for (int i = 0; i < 25; ++i) m += y.at(b, c, i / 5, i % 5);
    m /= n;
    for (int b = 0; b < 4; ++b)
      for (int i = 0; i < 25; ++i) v += std::pow(y.at(b, c, i / 5, i % 5) - m, 2);
    v /= n;
    CHECK(std::abs(m) < 1e-5);
    CHECK(std::abs(v - 1.0) < 1e-4);
  }
  CHECK(rm[0] != 0.0);  // running stats moved

  TensorD zm({3}), ov({3}, 1.0);
  GraphD ge;
  const TensorD ye = ge.value(ops::batchnorm2d(ge, ge.leaf(x), zm, ov, false));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(ye[i] == doctest::Approx(x[i] / std::sqrt(1.0 + 1e-5)));

  GraphD gc;
  TensorD cm({3}), cv({3}, 1.0);
  const TensorD yc = gc.value(ops::batchnorm2d(gc, gc.leaf(TensorD({2, 3, 2, 2}, 0.7)), cm, cv, true));
  for (double v : yc.values()) CHECK(std::abs(v) < 1e-10);

  GraphD g1;
  CHECK_THROWS_AS(ops::batchnorm2d(g1, g1.leaf(TensorD({1, 3, 2, 2})), cm, cv, true), ConfigError);
}

TEST_CASE("batchnorm gradients in both modes") {
  Rng rng(5);
  auto r = testing::check_gradients(
      [](GraphD& g, const std::vector<VarD>& v) {
        TensorD rm({2}), rv({2}, 1.0);
        return ops::batchnorm2d(g, v[0], rm, rv, true);
      },
      {random_tensor({3, 2, 3, 3}, rng)}, rng);
  CHECK(r.rel_error < 1e-4);
  const TensorD rm = random_tensor({2}, rng), rv = random_tensor({2}, rng, 0.5, 1.5);
  r = testing::check_gradients(
      [&](GraphD& g, const std::vector<VarD>& v) { return ops::batchnorm2d_eval(g, v[0], rm, rv); },
      {random_tensor({2, 2, 3, 3}, rng)}, rng);
  CHECK(r.rel_error < 1e-4);
}

TEST_CASE("dropout identities and drop rate") {
  Rng rng(6);
  const TensorD x = random_tensor({1, 1, 10, 10}, rng);
  GraphD g;
  CHECK(g.value(ops::dropout(g, g.leaf(x), 0.3, false, rng)) == x);
  CHECK(g.value(ops::dropout(g, g.leaf(x), 0.0, true, rng)) == x);

  Rng drop(7);
  const TensorD big({100000}, 1.0);
  const TensorD y = g.value(ops::dropout(g, g.leaf(big), 0.3, true, drop));
  std::size_t zeros = 0;
  for (double v : y.values()) {
    if (v == 0.0) {
      ++zeros;
    } else {
      CHECK_MESSAGE(std::abs(v - 1.0 / 0.7) < 1e-12, "survivor not rescaled");
    }
  }
  CHECK(std::abs(static_cast<double>(zeros) / 1e5 - 0.3) < 0.01);
  CHECK_THROWS_AS(ops::dropout(g, g.leaf(big), 1.0, true, drop), ConfigError);
}

TEST_CASE("softmax and sigmoid ranges") {
  const TensorD u = eval1(TensorD({1, 9}, 0.3), [](GraphD& g, VarD x) { return ops::softmax(g, x); });
  for (double v : u.values()) CHECK(v == doctest::Approx(1.0 / 9.0));

  TensorD big({1, 9});
  big[0] = 1000.0;
  const TensorD s = eval1(big, [](GraphD& g, VarD x) { return ops::softmax(g, x); });
  CHECK(std::isfinite(s[0]));
  CHECK(s[0] == doctest::Approx(1.0));
  CHECK(s[1] < 1e-300);

  Rng rng(8);
  const TensorD rows = eval1(random_tensor({5, 9}, rng, -20, 20), [](GraphD& g, VarD x) { return ops::softmax(g, x); });
  for (int r = 0; r < 5; ++r) {
    double sum = 0.0;
    for (int k = 0; k < 9; ++k) sum += rows[r * 9 + k];
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }

  const TensorD half = eval1(TensorD({1}), [](GraphD& g, VarD x) { return ops::sigmoid(g, x); });
  CHECK(half[0] == 0.5);
  const TensorF ext = [] {
    Graph<float> g;
    return g.value(ops::sigmoid(g, g.leaf(TensorF({2}, std::vector<float>{-30.f, 30.f}))));
  }();
  CHECK(ext[0] > 0.0f);
  CHECK(ext[1] <= 1.0f);
}

TEST_CASE("elementwise and loss gradients") {
  Rng rng(9);
  auto check = [&](testing::GraphFn f, std::vector<TensorD> in) {
    const auto r = testing::check_gradients(f, std::move(in), rng);
    CHECK(r.rel_error < 1e-4);
    CHECK(r.norm > 0.0);
  };
  TensorD lx = random_tensor({2, 2, 4, 4}, rng);
  for (auto& e : lx.values()) e += e >= 0 ? 0.05 : -0.05;
  check([](GraphD& g, const std::vector<VarD>& v) { return ops::leaky_relu(g, v[0], 0.2); }, {lx});
  check([](GraphD& g, const std::vector<VarD>& v) { return ops::softmax(g, v[0]); }, {random_tensor({2, 9}, rng)});
  check([](GraphD& g, const std::vector<VarD>& v) { return ops::log_softmax(g, v[0]); },
        {random_tensor({2, 9}, rng)});
  check([](GraphD& g, const std::vector<VarD>& v) { return ops::sigmoid(g, v[0]); },
        {random_tensor({1, 1, 4, 4}, rng, -3, 3)});
  check([](GraphD& g, const std::vector<VarD>& v) { return ops::mse_loss(g, v[0], v[1]); },
        {random_tensor({2, 3, 4, 4}, rng), random_tensor({2, 3, 4, 4}, rng)});
  check([](GraphD& g, const std::vector<VarD>& v) { return ops::add_channel_bias(g, v[0], v[1]); },
        {random_tensor({2, 3, 2, 2}, rng), random_tensor({3}, rng)});
  check([](GraphD& g, const std::vector<VarD>& v) { return ops::linear(g, v[0], v[1]); },
        {random_tensor({2, 6}, rng), random_tensor({3, 6}, rng)});
  check([](GraphD& g, const std::vector<VarD>& v) { return ops::upsample_nearest2x(g, v[0]); },
        {random_tensor({1, 2, 3, 3}, rng)});
  check([](GraphD& g, const std::vector<VarD>& v) { return ops::upsample_conv3x3(g, v[0], v[1]); },
        {random_tensor({2, 2, 3, 4}, rng), random_tensor({3, 2, 3, 3}, rng)});
  TensorD target({1, 1, 4, 4});
  for (auto& e : target.values()) e = rng.uniform() < 0.4;
  for (double alpha : {1.0, 0.5, 0.15}) {
    check([&](GraphD& g, const std::vector<VarD>& v) { return ops::weighted_bce(g, v[0], g.constant(target), alpha); },
          {random_tensor({1, 1, 4, 4}, rng, 0.05, 0.95)});
  }
}

TEST_CASE("weighted_bce worked values") {
  auto bce = [](double p, double y, double alpha) {
    GraphD g;
    return g.value(ops::weighted_bce(g, g.leaf(TensorD({1}, p)), g.constant(TensorD({1}, y)), alpha))[0];
  };
  CHECK(bce(0.5, 1.0, 0.3) == doctest::Approx(std::log(2.0)));
  CHECK(bce(0.5, 0.0, 0.5) == doctest::Approx(0.5 * std::log(2.0)));
  CHECK(bce(1.0 - 1e-7, 1.0, 1.0) < 1e-5);
  CHECK(bce(1e-7, 0.0, 1.0) < 1e-5);
  GraphD g;
  CHECK_THROWS_AS(ops::weighted_bce(g, g.leaf(TensorD({1}, 0.5)), g.constant(TensorD({1}, 0.5)), 1.0), ConfigError);
}

TEST_CASE("backward visits shared nodes once and accumulates") {
  GraphD g;
  auto x = g.leaf(TensorD({1, 1, 1, 2}, std::vector<double>{1.5, -2.0}));
  auto a = ops::leaky_relu(g, x, 0.2);
  auto y = ops::mse_loss(g, a, a);  // zero, but both inputs route through a
  auto z = ops::dot(g, a, TensorD({1, 1, 1, 2}, 1.0));
  g.backward(z);
  const TensorD gx = g.grad(x);
  CHECK(gx[0] == 1.0);
  CHECK(gx[1] == doctest::Approx(0.2));
  CHECK(g.value(y)[0] == 0.0);
}

TEST_CASE("adam update rules") {
  ParamSet<double> ps;
  auto& p = ps.add("w", TensorD({1}, 2.0));
  Adam<double> opt(AdamConfig{});
  opt.step(ps);  // zero gradient
  CHECK(p.value[0] == 2.0);

  ParamSet<double> one;
  auto& q = one.add("q", TensorD({1}, 0.0));
  Adam<double> o1(AdamConfig{});
  q.grad[0] = 1.0;
  o1.step(one);
  // m_hat = 1, v_hat = 1: step = lr / (1 + eps).
  CHECK(q.value[0] == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
  CHECK(o1.steps() == 1);

  ParamSet<double> both, a_only, b_only;
  auto& ba = both.add("a", TensorD({2}, 1.0));
  auto& bb = both.add("b", TensorD({3}, -1.0));
  auto& aa = a_only.add("a", TensorD({2}, 1.0));
  auto& bo = b_only.add("b", TensorD({3}, -1.0));
  Adam<double> ob(AdamConfig{}), oa(AdamConfig{}), oo(AdamConfig{});
  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < 2; ++i) ba.grad[i] = aa.grad[i] = 0.3 * (i + 1) - s;
    for (int i = 0; i < 3; ++i) bb.grad[i] = bo.grad[i] = -0.2 * i + s;
    ob.step(both);
    oa.step(a_only);
    oo.step(b_only);
  }
  CHECK(ba.value == aa.value);
  CHECK(bb.value == bo.value);
}
