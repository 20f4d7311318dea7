#pragma once

#include <cmath>

#include "lpad/rng.hpp"
#include "lpad/tensor.hpp"

namespace lpad {

/// Uniform in [-s, s] with s = sqrt(6 / (fan_in + fan_out)). For a conv
/// kernel [Co, Ci, kh, kw] the fans are Ci*kh*kw and Co*kh*kw; for a linear
/// weight [O, F] they are F and O.
template <typename T>
Tensor<T> glorot_uniform(const Shape& shape, Rng& rng) {
  Tensor<T> w(shape);
  double fan_in = shape.size() > 1 ? shape[1] : shape[0];
  double fan_out = shape[0];
  for (std::size_t i = 2; i < shape.size(); ++i) {
    fan_in *= shape[i];
    fan_out *= shape[i];
  }
  const double s = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-s, s));
  return w;
}

}  // namespace lpad
