#include "lpad/imagefeat.hpp"

#include <algorithm>
#include <cmath>

namespace lpad::imagefeat {
namespace {

template <typename T>
void require_image(const Tensor<T>& image, const char* what) {
  if (image.rank() != 3) {
    throw ConfigError(std::string(what) + " expects a [C,H,W] image, got " + shape_str(image.shape()));
  }
}

void require_same_extents(const Shape& a, const Shape& b, const char* what) {
  if (a.size() != 3 || b.size() != 3 || a[1] != b[1] || a[2] != b[2]) {
    throw ConfigError(std::string(what) + ": extent mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

}  // namespace

int reflect101(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

template <typename T>
Tensor<T> sobel_magnitude(const Tensor<T>& image) {
  require_image(image, "sobel_magnitude");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h < 3 || w < 3) throw ConfigError("sobel_magnitude needs at least 3x3 pixels, got " + shape_str(image.shape()));
  Tensor<T> out({1, h, w});
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      const int ym = reflect101(y - 1, h), yp = reflect101(y + 1, h);
      for (int x = 0; x < w; ++x) {
        const int xm = reflect101(x - 1, w), xp = reflect101(x + 1, w);
        auto px = [&](int yy, int xx) { return static_cast<double>(image.at(ch, yy, xx)); };
        const double gx = (px(ym, xp) + 2.0 * px(y, xp) + px(yp, xp)) - (px(ym, xm) + 2.0 * px(y, xm) + px(yp, xm));
        const double gy = (px(yp, xm) + 2.0 * px(yp, x) + px(yp, xp)) - (px(ym, xm) + 2.0 * px(ym, x) + px(ym, xp));
        out.at(0, y, x) += static_cast<T>(std::sqrt(gx * gx + gy * gy) / c);
      }
    }
  }
  return out;
}

std::vector<double> gaussian_taps(double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian blur sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    taps[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    sum += taps[k + radius];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

namespace {

// Blurs every channel in double precision.
std::vector<double> blur_channels(const std::vector<double>& src, int c, int h, int w, const std::vector<double>& taps) {
  const int radius = static_cast<int>(taps.size() / 2);
  std::vector<double> tmp(src.size()), out(src.size());
  for (int ch = 0; ch < c; ++ch) {
    const double* s = src.data() + static_cast<std::size_t>(ch) * h * w;
    double* t = tmp.data() + static_cast<std::size_t>(ch) * h * w;
    double* o = out.data() + static_cast<std::size_t>(ch) * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += taps[k + radius] * s[y * w + reflect101(x + k, w)];
        t[y * w + x] = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += taps[k + radius] * t[reflect101(y + k, h) * w + x];
        o[y * w + x] = acc;
      }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& image, double sigma) {
  require_image(image, "gaussian_blur");
  std::vector<double> src(image.values().begin(), image.values().end());
  auto out = blur_channels(src, image.dim(0), image.dim(1), image.dim(2), gaussian_taps(sigma));
  return Tensor<T>(image.shape(), std::vector<T>(out.begin(), out.end()));
}

template <typename T>
Tensor<T> local_variance(const Tensor<T>& image, double blur_sigma) {
  require_image(image, "local_variance");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const auto taps = gaussian_taps(blur_sigma);
  std::vector<double> x(image.values().begin(), image.values().end());
  std::vector<double> x2(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) x2[k] = x[k] * x[k];
  const auto bx = blur_channels(x, c, h, w, taps);
  const auto bx2 = blur_channels(x2, c, h, w, taps);
  Tensor<T> out({1, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t p = 0; p < plane; ++p) {
    double acc = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t k = ch * plane + p;
      acc += std::max(0.0, bx2[k] - bx[k] * bx[k]);
    }
    out[p] = static_cast<T>(acc / c);
  }
  return out;
}

template <typename T>
Tensor<T> fuse_maps(const Tensor<T>& mae, const Tensor<T>& var, const Tensor<T>& grad, const FusionWeights& w) {
  require_same_shape(mae.shape(), var.shape(), "fuse_maps (mae vs var)");
  require_same_shape(mae.shape(), grad.shape(), "fuse_maps (mae vs grad)");
  Tensor<T> out(mae.shape());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = static_cast<T>(w.mae * mae[k] + w.var * var[k] + w.grad * grad[k]);
  }
  return out;
}

template <typename T>
Tensor<T> normalize_map(const Tensor<T>& map, double eps) {
  if (map.empty()) return map;
  const auto [lo, hi] = std::minmax_element(map.values().begin(), map.values().end());
  const double mn = *lo, range = static_cast<double>(*hi) - mn;
  Tensor<T> out(map.shape());
  for (std::size_t k = 0; k < map.size(); ++k) {
    out[k] = static_cast<T>((map[k] - mn) / (range + eps));
  }
  return out;
}

template <typename T>
Tensor<T> are_map(const Tensor<T>& image, const Tensor<T>& reconstruction) {
  require_image(image, "are_map");
  require_same_shape(image.shape(), reconstruction.shape(), "are_map");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor<T> out({1, h, w});
  for (std::size_t p = 0; p < plane; ++p) {
    double acc = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      acc += std::abs(static_cast<double>(image[ch * plane + p]) - reconstruction[ch * plane + p]);
    }
    out[p] = static_cast<T>(acc / c);
  }
  return out;
}

FusedMap build_fused_map(const TensorF& image, const TensorF& are, const FusionWeights& weights, double blur_sigma) {
  require_same_extents(image.shape(), are.shape(), "build_fused_map");
  const TensorF var = local_variance(image, blur_sigma);
  const TensorF grad = sobel_magnitude(image);
  return FusedMap{normalize_map(fuse_maps(are, var, grad, weights)), weights};
}

HistoryMap::HistoryMap(int height, int width, std::string key)
    : height_(height), width_(width), key_(std::move(key)), counts_(static_cast<std::size_t>(height) * width, 0) {
  if (height < 1 || width < 1) throw ConfigError("history map extents must be positive");
}

void HistoryMap::check_inside(const Rect& r) const {
  if (r.top < 0 || r.left < 0 || r.height < 1 || r.width < 1 || r.top + r.height > height_ ||
      r.left + r.width > width_) {
    throw InternalError("rectangle (" + std::to_string(r.top) + "," + std::to_string(r.left) + ") " +
                        std::to_string(r.height) + "x" + std::to_string(r.width) + " outside history map " +
                        std::to_string(height_) + "x" + std::to_string(width_));
  }
}

void HistoryMap::visit(const Rect& r) {
  check_inside(r);
  for (int y = r.top; y < r.top + r.height; ++y) {
    std::uint32_t* row = counts_.data() + static_cast<std::size_t>(y) * width_;
    for (int x = r.left; x < r.left + r.width; ++x) {
      max_ = std::max(max_, ++row[x]);
    }
  }
}

std::uint64_t HistoryMap::total() const {
  std::uint64_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

double HistoryMap::normalized(int y, int x) const {
  return static_cast<double>(count(y, x)) / (static_cast<double>(max_) + 1.0);
}

TensorF HistoryMap::normalized_map() const {
  TensorF out({1, height_, width_});
  const double denom = static_cast<double>(max_) + 1.0;
  for (std::size_t k = 0; k < counts_.size(); ++k) out[k] = static_cast<float>(counts_[k] / denom);
  return out;
}

double HistoryMap::normalized_mean(const Rect& r) const {
  check_inside(r);
  std::uint64_t s = 0;
  for (int y = r.top; y < r.top + r.height; ++y)
    for (int x = r.left; x < r.left + r.width; ++x) s += count(y, x);
  return static_cast<double>(s) / (static_cast<double>(r.height) * r.width) / (static_cast<double>(max_) + 1.0);
}

void HistoryMap::restore(std::vector<std::uint32_t> counts) {
  if (counts.size() != counts_.size()) throw ConfigError("history map restore: size mismatch");
  counts_ = std::move(counts);
  max_ = counts_.empty() ? 0 : *std::max_element(counts_.begin(), counts_.end());
}

HistoryMap update_history(HistoryMap history, const Rect& r) {
  history.visit(r);
  return history;
}

TensorF build_sampler_input(const TensorF& rgb, const FusedMap& fused, const HistoryMap& history,
                            const TensorF& prev_are) {
  require_image(rgb, "build_sampler_input");
  if (rgb.dim(0) != 3) throw ConfigError("build_sampler_input needs 3 colour channels, got " + shape_str(rgb.shape()));
  require_same_extents(rgb.shape(), fused.values.shape(), "build_sampler_input (fused map)");
  require_same_extents(rgb.shape(), prev_are.shape(), "build_sampler_input (previous ARE)");
  if (history.height() != rgb.dim(1) || history.width() != rgb.dim(2)) {
    throw ConfigError("build_sampler_input: history map extents differ from image " + shape_str(rgb.shape()));
  }
  const int h = rgb.dim(1), w = rgb.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  TensorF out({6, h, w});
  std::copy(rgb.data(), rgb.data() + 3 * plane, out.data());
  std::copy(fused.values.data(), fused.values.data() + plane, out.data() + 3 * plane);
  const TensorF hist = history.normalized_map();
  std::copy(hist.data(), hist.data() + plane, out.data() + 4 * plane);
  for (std::size_t p = 0; p < plane; ++p) out[5 * plane + p] = std::clamp(prev_are[p], 0.0f, 1.0f);
  return out;
}

TensorF crop(const TensorF& image, const Rect& r) {
  require_image(image, "crop");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (r.top < 0 || r.left < 0 || r.height < 1 || r.width < 1 || r.top + r.height > h || r.left + r.width > w) {
    throw InternalError("crop rectangle outside image " + shape_str(image.shape()));
  }
  TensorF out({c, r.height, r.width});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < r.height; ++y) {
      const float* src = &image.at(ch, r.top + y, r.left);
      std::copy(src, src + r.width, &out.at(ch, y, 0));
    }
  return out;
}

void set_channel(TensorF& stack, int channel, const TensorF& map) {
  require_same_extents(stack.shape(), map.shape(), "set_channel");
  const std::size_t plane = static_cast<std::size_t>(stack.dim(1)) * stack.dim(2);
  std::copy(map.data(), map.data() + plane, stack.data() + channel * plane);
}

#define LPAD_INSTANTIATE_FEAT(T)                                                                   \
  template Tensor<T> sobel_magnitude(const Tensor<T>&);                                            \
  template Tensor<T> gaussian_blur(const Tensor<T>&, double);                                      \
  template Tensor<T> local_variance(const Tensor<T>&, double);                                     \
  template Tensor<T> fuse_maps(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const FusionWeights&); \
  template Tensor<T> normalize_map(const Tensor<T>&, double);                                      \
  template Tensor<T> are_map(const Tensor<T>&, const Tensor<T>&);

LPAD_INSTANTIATE_FEAT(float)
LPAD_INSTANTIATE_FEAT(double)

}  // namespace lpad::imagefeat
