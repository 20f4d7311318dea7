#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lpad/tensor.hpp"

// Non-learned image statistics. Images are [C,H,W] tensors with values in
// [0,1]; single-channel maps are [1,H,W].
namespace lpad::imagefeat {

/// Mirror index without repeating the edge sample (…2 1 | 0 1 2 … n-1 | n-2 …).
int reflect101(int i, int n);

/// Per-channel 3x3 Sobel magnitude sqrt(gx^2 + gy^2), averaged over channels.
/// Borders are reflect-padded so the map keeps the image extents.
template <typename T>
Tensor<T> sobel_magnitude(const Tensor<T>& image);

/// Normalized 1-D Gaussian taps with radius ceil(3 sigma).
std::vector<double> gaussian_taps(double sigma);

/// Separable Gaussian blur of every channel, reflect-padded.
template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& image, double sigma);

/// Blur(x^2) - Blur(x)^2 per channel, clamped at 0, averaged over channels.
template <typename T>
Tensor<T> local_variance(const Tensor<T>& image, double blur_sigma);

struct FusionWeights {
  double mae = 0.7;
  double var = 0.1;
  double grad = 0.2;
};

/// Weighted elementwise sum, before normalization.
template <typename T>
Tensor<T> fuse_maps(const Tensor<T>& mae, const Tensor<T>& var, const Tensor<T>& grad, const FusionWeights& w);

inline constexpr double kNormalizeEps = 1e-8;

/// (v - min) / (max - min + eps).
template <typename T>
Tensor<T> normalize_map(const Tensor<T>& map, double eps = kNormalizeEps);

/// Per-pixel |image - reconstruction| averaged over channels.
template <typename T>
Tensor<T> are_map(const Tensor<T>& image, const Tensor<T>& reconstruction);

/// Normalized fused statistics of one image, frozen once computed.
struct FusedMap {
  TensorF values;  // [1,H,W] in [0,1]
  FusionWeights weights;
};

/// ARE, local variance and Sobel magnitude of `image`, fused and normalized.
FusedMap build_fused_map(const TensorF& image, const TensorF& are, const FusionWeights& weights,
                         double blur_sigma);

struct Rect {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
  bool operator==(const Rect&) const = default;
};

/// Per-pixel visit counts for one image. Counts only ever grow.
class HistoryMap {
 public:
  HistoryMap() = default;
  HistoryMap(int height, int width, std::string key = {});

  /// Increments every cell covered by r. Throws InternalError when r is not
  /// fully inside the map.
  void visit(const Rect& r);

  int height() const { return height_; }
  int width() const { return width_; }
  const std::string& key() const { return key_; }
  std::uint32_t count(int y, int x) const { return counts_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint32_t max_count() const { return max_; }
  std::uint64_t total() const;
  std::span<const std::uint32_t> counts() const { return counts_; }

  /// count / (max_count + 1); zero for a fresh map, strictly below 1.
  double normalized(int y, int x) const;
  TensorF normalized_map() const;
  /// Mean normalized count over r.
  double normalized_mean(const Rect& r) const;

  void restore(std::vector<std::uint32_t> counts);

 private:
  void check_inside(const Rect& r) const;

  int height_ = 0;
  int width_ = 0;
  std::string key_;
  std::vector<std::uint32_t> counts_;
  std::uint32_t max_ = 0;
};

/// Functional form of HistoryMap::visit.
HistoryMap update_history(HistoryMap history, const Rect& r);

/// Stacks RGB, fused map, normalized history and the previous ARE (clamped to
/// [0,1]) into a [6,H,W] tensor, in that channel order.
TensorF build_sampler_input(const TensorF& rgb, const FusedMap& fused, const HistoryMap& history,
                            const TensorF& prev_are);

/// Copies the rectangle r out of a [C,H,W] tensor.
TensorF crop(const TensorF& image, const Rect& r);

/// Writes a single-channel map into channel `channel` of a [C,H,W] tensor.
void set_channel(TensorF& stack, int channel, const TensorF& map);

}  // namespace lpad::imagefeat
