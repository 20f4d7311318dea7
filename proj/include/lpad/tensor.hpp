#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lpad/errors.hpp"

namespace lpad {

/// Extents of a dense array, outermost first. Up to four axes are used:
/// (batch, channels, height, width), trailing axes dropped for lower ranks.
using Shape = std::vector<int>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array. The empty tensor (rank 0, no data) marks "unset".
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    validate();
    data_.assign(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate();
    if (data_.size() != shape_numel(shape_)) {
      throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_str(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis < 0 ? rank() + axis : axis)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() & { return data_; }
  std::span<const T> values() const& { return data_; }
  std::span<const T> values() && = delete;
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Rank-4 / rank-3 accessors; no bounds checks beyond debug asserts.
  T& at(int n, int c, int h, int w) { return data_[index4(n, c, h, w)]; }
  const T& at(int n, int c, int h, int w) const { return data_[index4(n, c, h, w)]; }
  T& at(int c, int h, int w) { return data_[index3(c, h, w)]; }
  const T& at(int c, int h, int w) const { return data_[index3(c, h, w)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data, new extents with equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw ConfigError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  void validate() const {
    if (shape_.empty() || shape_.size() > 4) {
      throw ConfigError("tensor rank must be 1..4, got shape " + shape_str(shape_));
    }
    for (int e : shape_) {
      if (e < 1) throw ConfigError("tensor extents must be >= 1, got " + shape_str(shape_));
    }
  }
  std::size_t index4(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }
  std::size_t index3(int c, int h, int w) const {
    return (static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w;
  }

  Shape shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Throws ConfigError naming both shapes unless they are equal.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace lpad
