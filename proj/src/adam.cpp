#include "lpad/adam.hpp"

#include <cmath>

namespace lpad {

template <typename T>
void Adam<T>::step(ParamSet<T>& params) {
  std::vector<Parameter<T>*> trainable;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].trainable) trainable.push_back(&params[i]);
  }
  if (m_.empty()) {
    for (auto* p : trainable) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
  if (m_.size() != trainable.size()) {
    throw ConfigError("adam: optimizer state holds " + std::to_string(m_.size()) + " moments for " +
                      std::to_string(trainable.size()) + " parameters");
  }
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    require_same_shape(m_[i].shape(), trainable[i]->value.shape(), "adam moment");
    require_same_shape(trainable[i]->grad.shape(), trainable[i]->value.shape(), "adam gradient");
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    Tensor<T>& w = trainable[i]->value;
    const Tensor<T>& g = trainable[i]->grad;
    Tensor<T>& m = m_[i];
    Tensor<T>& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k];
      const double mk = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
      const double vk = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = cfg_.lr * (mk / bc1) / (std::sqrt(vk / bc2) + cfg_.eps);
      w[k] = static_cast<T>(w[k] - update);
    }
  }
}

template <typename T>
void Adam<T>::restore(std::int64_t step, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v) {
  if (m.size() != v.size()) throw ConfigError("adam: moment lists differ in length");
  for (std::size_t i = 0; i < m.size(); ++i) require_same_shape(m[i].shape(), v[i].shape(), "adam restore");
  step_ = step;
  m_ = std::move(m);
  v_ = std::move(v);
}

template class Adam<float>;
template class Adam<double>;

}  // namespace lpad
