#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lpad/adam.hpp"
#include "lpad/ops.hpp"

namespace lpad::recon {

struct AutoencoderConfig {
  std::vector<int> channels{3, 32, 64, 128, 128};  // encoder widths, input first
  double dropout = 0.3;
  double leaky_slope = 0.2;
  ops::BatchNormOptions batchnorm;
  int patch = 64;
};

/// Convolutional encoder-decoder without skip connections. Each encoder
/// layer is a stride-2 3x3 conv, LeakyReLU and BatchNorm; dropout follows the
/// last encoder layer. The decoder mirrors it with 2x nearest upsampling and
/// 3x3 convs and ends in a sigmoid.
template <typename T>
class AutoencoderNet {
 public:
  using Var = typename Graph<T>::Var;

  AutoencoderNet(const AutoencoderConfig& cfg, Rng& init_rng);

  /// x is [N,3,P,P]. Train mode needs a dropout source when dropout > 0 and
  /// updates the BatchNorm running statistics.
  Var forward(Graph<T>& g, Var x, Mode mode, Rng* dropout_rng);

  /// Eval-mode reconstruction of a [N,3,P,P] batch. Reads the weights only,
  /// so concurrent calls are safe.
  Tensor<T> reconstruct(const Tensor<T>& batch) const;

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  const AutoencoderConfig& config() const { return cfg_; }

 private:
  Var build(Graph<T>& g, Var x, bool train, Rng* rng, ParamSet<T>* bound) const;
  void check_input(const Shape& s) const;

  AutoencoderConfig cfg_;
  ParamSet<T> params_;
};

extern template class AutoencoderNet<float>;
extern template class AutoencoderNet<double>;

/// Mean squared error over every element (channels folded into the mean).
template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b);

/// One Adam step on a [N,3,P,P] batch; returns the batch loss before the step.
double train_step(AutoencoderNet<float>& net, Adam<float>& opt, const TensorF& batch, Rng& dropout_rng);

/// Per-pixel channel-averaged reconstruction error over a full image.
struct LossProfile {
  TensorF map;  // [1,H,W]
  std::string image_id;
  std::int64_t generation = 0;
};

/// Tiles a [3,H,W] image into non-overlapping PxP patches, reconstructs them
/// in eval mode and assembles the absolute error map.
LossProfile generate_loss_profile(const TensorF& image, const AutoencoderNet<float>& net, std::string image_id,
                                  std::int64_t generation);

/// generate_loss_profile's tiling with an arbitrary batch reconstructor.
template <typename Fn>
TensorF tiled_error(const TensorF& image, int patch, Fn&& reconstruct) {
  if (image.rank() != 3) throw ConfigError("loss profile expects a [C,H,W] image, got " + shape_str(image.shape()));
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h % patch != 0 || w % patch != 0) {
    throw ConfigError("image extents " + shape_str(image.shape()) + " are not divisible by the patch size " +
                      std::to_string(patch));
  }
  const int ty = h / patch, tx = w / patch;
  TensorF tiles({ty * tx, c, patch, patch});
  for (int a = 0; a < ty; ++a)
    for (int b = 0; b < tx; ++b)
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < patch; ++y) {
          const float* src = &image.at(ch, a * patch + y, b * patch);
          std::copy(src, src + patch, &tiles.at(a * tx + b, ch, y, 0));
        }
  const TensorF rec = reconstruct(tiles);
  require_same_shape(rec.shape(), tiles.shape(), "tile reconstruction");
  TensorF out({1, h, w});
  const std::size_t plane = static_cast<std::size_t>(patch) * patch;
  for (int t = 0; t < ty * tx; ++t) {
    const int oy = (t / tx) * patch, ox = (t % tx) * patch;
    for (std::size_t p = 0; p < plane; ++p) {
      double acc = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t k = (static_cast<std::size_t>(t) * c + ch) * plane + p;
        acc += std::abs(static_cast<double>(tiles[k]) - rec[k]);
      }
      out.at(0, oy + static_cast<int>(p / patch), ox + static_cast<int>(p % patch)) = static_cast<float>(acc / c);
    }
  }
  return out;
}

}  // namespace lpad::recon
