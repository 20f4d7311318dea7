#pragma once

#include <cstdint>
#include <vector>

#include "lpad/params.hpp"

namespace lpad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are created lazily on the first step so
/// that one optimizer can be declared before its network is built.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Applies one update to every trainable parameter from its .grad buffer.
  void step(ParamSet<T>& params);

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::int64_t steps() const { return step_; }

  // Checkpoint access. Moments are ordered like the trainable entries of
  // the parameter set they were built for.
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }
  void restore(std::int64_t step, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v);

 private:
  AdamConfig cfg_;
  std::int64_t step_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace lpad
