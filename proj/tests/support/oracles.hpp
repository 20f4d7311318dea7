#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "lpad/imagefeat.hpp"

// Direct, loop-by-loop reference computations used as test oracles.
namespace lpad::testing {

/// 3x3 Sobel magnitude by explicit kernel sums, reflect-101 borders,
/// channel-averaged.
inline TensorD sobel_oracle(const TensorD& img) {
  static const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  static const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  TensorD out({1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        double gx = 0.0, gy = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const double v = img.at(ch, imagefeat::reflect101(y + dy, h), imagefeat::reflect101(x + dx, w));
            gx += kx[dy + 1][dx + 1] * v;
            gy += ky[dy + 1][dx + 1] * v;
          }
        acc += std::sqrt(gx * gx + gy * gy);
      }
      out.at(0, y, x) = acc / c;
    }
  return out;
}

/// Weighted variance under the 2-D Gaussian window at every pixel, evaluated
/// directly rather than through separable blurs.
inline TensorD variance_oracle(const TensorD& img, double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> g1(2 * r + 1);
  double z = 0.0;
  for (int i = -r; i <= r; ++i) z += g1[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : g1) v /= z;
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  TensorD out({1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        double m1 = 0.0, m2 = 0.0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const double wgt = g1[dy + r] * g1[dx + r];
            const double v = img.at(ch, imagefeat::reflect101(y + dy, h), imagefeat::reflect101(x + dx, w));
            m1 += wgt * v;
            m2 += wgt * v * v;
          }
        acc += std::max(0.0, m2 - m1 * m1);
      }
      out.at(0, y, x) = acc / c;
    }
  return out;
}

struct F1Oracle {
  double f1 = 0.0;
  double threshold = 0.0;
};

/// Tries every distinct score as the threshold; keeps the lowest threshold
/// among equal F1 values (compared as exact fractions).
inline F1Oracle f1_oracle(const std::vector<double>& s, const std::vector<std::uint8_t>& l) {
  std::vector<double> th(s);
  std::sort(th.begin(), th.end());
  th.erase(std::unique(th.begin(), th.end()), th.end());
  long best_num = -1, best_den = 1;
  F1Oracle best;
  for (double t : th) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const bool p = s[i] >= t;
      tp += p && l[i];
      fp += p && !l[i];
      fn += !p && l[i];
    }
    const long num = 2 * tp, den = 2 * tp + fp + fn;
    if (best_num < 0 || num * best_den > best_num * den) {
      best_num = num;
      best_den = den;
      best = {static_cast<double>(num) / static_cast<double>(den), t};
    }
  }
  return best;
}

/// Pairwise count with ties as one half.
inline double auc_oracle(const std::vector<double>& s, const std::vector<std::uint8_t>& l) {
  long twice = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!l[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[j]) continue;
      ++pairs;
      twice += s[i] > s[j] ? 2 : (s[i] == s[j] ? 1 : 0);
    }
  }
  return static_cast<double>(twice) / static_cast<double>(2 * pairs);
}

}  // namespace lpad::testing
