#include <doctest.h>

#include "lpad/imagefeat.hpp"
#include "lpad/recon.hpp"

using namespace lpad;
using namespace lpad::recon;

namespace {

TensorF random_batch(int n, int p, Rng& rng) {
  TensorF t({n, 3, p, p});
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform());
  return t;
}

// Smooth texture patches, closer to real inputs than white noise.
TensorF texture_batch(int n, int p, Rng& rng) {
  TensorF t({n, 3, p, p});
  for (int b = 0; b < n; ++b) {
    const double fx = rng.uniform(0.05, 0.2), fy = rng.uniform(0.05, 0.2), ph = rng.uniform(0, 6.28);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          t.at(b, c, y, x) = static_cast<float>(0.5 + 0.3 * std::sin(fx * x + fy * y + ph + c));
  }
  return t;
}

}  // namespace

TEST_CASE("mse values") {
  const TensorF a({1, 1, 64, 64}), b({1, 1, 64, 64}, 1.0f);
  CHECK(mse(a, a) == 0.0);
  CHECK(mse(a, b) == 1.0);
  TensorF c = a;
  c[100] = 1.0f;
  CHECK(mse(a, c) == doctest::Approx(1.0 / 4096.0));
  CHECK_THROWS_AS(mse(a, TensorF({1, 1, 64, 63})), ConfigError);
}

TEST_CASE("autoencoder shapes, range and eval determinism") {
  Rng init(1);
  AutoencoderNet<float> net(AutoencoderConfig{}, init);
  Rng rng(2);
  const TensorF x = random_batch(2, 64, rng);
  const TensorF y1 = net.reconstruct(x), y2 = net.reconstruct(x);
  CHECK(y1.shape() == x.shape());
  CHECK(y1 == y2);
  for (float v : y1.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK_THROWS_AS(net.reconstruct(TensorF({1, 3, 32, 32})), ConfigError);
  CHECK_THROWS_AS(net.reconstruct(TensorF({1, 1, 64, 64})), ConfigError);

  // Train mode is stochastic through dropout and differs from eval.
  Graph<float> g;
  Rng d(3);
  const TensorF yt = g.value(net.forward(g, g.constant(x), Mode::kTrain, &d));
  CHECK(yt.shape() == x.shape());
  CHECK(!(yt == y1));
}

TEST_CASE("autoencoder overfits one repeated patch") {
  Rng init(4), rng(5), drop(6);
  AutoencoderNet<float> net(AutoencoderConfig{}, init);
  Adam<float> opt(AdamConfig{});
  const TensorF one = texture_batch(1, 64, rng);
  TensorF batch({4, 3, 64, 64});
  for (int b = 0; b < 4; ++b) std::copy_n(one.data(), one.size(), batch.data() + b * one.size());
  double last = 1.0;
  for (int s = 0; s < 200; ++s) last = train_step(net, opt, batch, drop);
  CHECK(last < 0.01);
}

TEST_CASE("training on normal texture halves the running loss within 100 steps") {
  Rng init(7), rng(8), drop(9);
  AutoencoderNet<float> net(AutoencoderConfig{}, init);
  Adam<float> opt(AdamConfig{});
  std::vector<double> losses;
  for (int s = 0; s < 100; ++s) losses.push_back(train_step(net, opt, texture_batch(8, 64, rng), drop));
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 10; ++i) {
    head += losses[i];
    tail += losses[90 + i];
  }
  CHECK(tail < 0.5 * head);
}

TEST_CASE("loss profile tiling") {
  Rng rng(10);
  TensorF img({3, 256, 256});
  for (auto& v : img.values()) v = static_cast<float>(rng.uniform());

  const TensorF ident = tiled_error(img, 64, [](const TensorF& t) { return t; });
  for (float v : ident.values()) CHECK(v == 0.0f);

  // A reconstructor that marks each tile with its index proves every pixel is
  // covered by exactly one tile.
  int calls = 0;
  const TensorF marks = tiled_error(TensorF({3, 256, 256}), 64, [&](const TensorF& t) {
    ++calls;
    CHECK(t.dim(0) == 16);
    TensorF r(t.shape());
    for (int n = 0; n < t.dim(0); ++n)
      for (std::size_t k = 0; k < r.size() / 16; ++k) r[n * (r.size() / 16) + k] = static_cast<float>(n + 1);
    return r;
  });
  CHECK(calls == 1);
  for (int y = 0; y < 256; ++y)
    for (int x = 0; x < 256; ++x) CHECK(marks.at(0, y, x) == static_cast<float>((y / 64) * 4 + x / 64 + 1));

  Rng init(11);
  AutoencoderNet<float> net(AutoencoderConfig{}, init);
  const auto prof = generate_loss_profile(img, net, "a", 3);
  CHECK(prof.map.shape() == Shape{1, 256, 256});
  CHECK(prof.image_id == "a");
  CHECK(prof.generation == 3);
  // Oracle: reconstruct each tile alone and apply are_map.
  for (int ty : {0, 3})
    for (int tx : {1, 2}) {
      const imagefeat::Rect r{ty * 64, tx * 64, 64, 64};
      const TensorF tile = imagefeat::crop(img, r);
      const TensorF rec = net.reconstruct(tile.reshaped({1, 3, 64, 64})).reshaped({3, 64, 64});
      const TensorF are = imagefeat::are_map(tile, rec);
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
          CHECK(prof.map.at(0, r.top + y, r.left + x) == doctest::Approx(are.at(0, y, x)).epsilon(1e-6));
    }
  CHECK(generate_loss_profile(img, net, "a", 3).map == prof.map);
  CHECK_THROWS_AS(generate_loss_profile(TensorF({3, 100, 128}), net, "b", 0), ConfigError);
}
