#pragma once

#include <vector>

#include "lpad/adam.hpp"
#include "lpad/ops.hpp"

namespace lpad::segpred {

struct PredictorConfig {
  int width = 32;
  std::vector<int> dilations{1, 2, 4, 8};
  double leaky_slope = 0.2;
};

/// Fully convolutional segmenter over single-channel loss profiles: a stack
/// of 3x3 convs with the configured dilations (padding = dilation), LeakyReLU
/// between layers, and a 3x3 sigmoid head. Output extents equal input extents.
template <typename T>
class PredictorNet {
 public:
  using Var = typename Graph<T>::Var;

  PredictorNet(const PredictorConfig& cfg, Rng& init_rng);

  /// x is [N,1,H,W]; returns probabilities [N,1,H,W].
  Var forward(Graph<T>& g, Var x);

  /// Probabilities for a [N,1,H,W] batch on frozen weights; thread-safe.
  Tensor<T> predict(const Tensor<T>& profiles) const;

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  const PredictorConfig& config() const { return cfg_; }

 private:
  Var build(Graph<T>& g, Var x, ParamSet<T>* bound) const;

  PredictorConfig cfg_;
  ParamSet<T> params_;
};

extern template class PredictorNet<float>;
extern template class PredictorNet<double>;

struct AlphaSchedule {
  double initial = 1.0;
  double floor = 0.15;
  int horizon = 1000;
};

/// max(floor, initial * (1 - step / horizon)).
double alpha_at(long step, const AlphaSchedule& schedule);

/// Weighted BCE of predictions against binary masks, no gradient.
double bce_value(const TensorF& pred, const TensorF& mask, double alpha);

/// One Adam step on profiles/masks [K,1,h,w]; returns the loss before the step.
double train_step(PredictorNet<float>& net, Adam<float>& opt, const TensorF& profiles, const TensorF& masks,
                  double alpha);

}  // namespace lpad::segpred
