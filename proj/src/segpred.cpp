#include "lpad/segpred.hpp"

#include <algorithm>
#include <cmath>

#include "lpad/init.hpp"

namespace lpad::segpred {

template <typename T>
PredictorNet<T>::PredictorNet(const PredictorConfig& cfg, Rng& init_rng) : cfg_(cfg) {
  if (cfg_.dilations.empty()) throw ConfigError("predictor needs at least one dilated layer");
  if (cfg_.width < 1) throw ConfigError("predictor width must be positive");
  int in = 1;
  for (std::size_t i = 0; i < cfg_.dilations.size(); ++i) {
    if (cfg_.dilations[i] < 1) throw ConfigError("predictor dilations must be >= 1");
    const std::string p = "conv" + std::to_string(i);
    params_.add(p + ".w", glorot_uniform<T>({cfg_.width, in, 3, 3}, init_rng));
    params_.add(p + ".b", Tensor<T>({cfg_.width}));
    in = cfg_.width;
  }
  params_.add("head.w", glorot_uniform<T>({1, in, 3, 3}, init_rng));
  params_.add("head.b", Tensor<T>({1}));
}

template <typename T>
typename PredictorNet<T>::Var PredictorNet<T>::build(Graph<T>& g, Var x, ParamSet<T>* bound) const {
  const Shape& s = g.value(x).shape();
  if (s.size() != 4 || s[1] != 1) {
    throw ConfigError("predictor expects single-channel [N,1,H,W] profiles, got " + shape_str(s));
  }
  std::size_t next = 0;
  auto take = [&]() -> Var {
    const std::size_t i = next++;
    return bound != nullptr ? g.param((*bound)[i]) : g.constant(params_[i].value);
  };
  Var h = x;
  for (int d : cfg_.dilations) {
    Var w = take();
    Var b = take();
    h = ops::add_channel_bias(g, ops::conv2d(g, h, w, {.stride = 1, .dilation = d, .padding = d}), b);
    h = ops::leaky_relu(g, h, cfg_.leaky_slope);
  }
  Var w = take();
  Var b = take();
  h = ops::add_channel_bias(g, ops::conv2d(g, h, w, {.stride = 1, .dilation = 1, .padding = 1}), b);
  return ops::sigmoid(g, h);
}

template <typename T>
typename PredictorNet<T>::Var PredictorNet<T>::forward(Graph<T>& g, Var x) {
  return build(g, x, &params_);
}

template <typename T>
Tensor<T> PredictorNet<T>::predict(const Tensor<T>& profiles) const {
  Graph<T> g;
  return g.value(build(g, g.constant(profiles), nullptr));
}

double alpha_at(long step, const AlphaSchedule& schedule) {
  if (schedule.horizon < 1) throw ConfigError("alpha horizon must be >= 1");
  if (step < 0) throw ConfigError("alpha schedule step must be >= 0");
  return std::max(schedule.floor,
                  schedule.initial * (1.0 - static_cast<double>(step) / static_cast<double>(schedule.horizon)));
}

double bce_value(const TensorF& pred, const TensorF& mask, double alpha) {
  require_same_shape(pred.shape(), mask.shape(), "weighted BCE");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(static_cast<double>(pred[i]), ops::kBceClip, 1.0 - ops::kBceClip);
    const float y = mask[i];
    if (y != 0.0f && y != 1.0f) throw ConfigError("weighted BCE targets must be 0 or 1");
    s -= y == 1.0f ? std::log(p) : alpha * std::log(1.0 - p);
  }
  return s / static_cast<double>(pred.size());
}

double train_step(PredictorNet<float>& net, Adam<float>& opt, const TensorF& profiles, const TensorF& masks,
                  double alpha) {
  Graph<float> g;
  auto y = net.forward(g, g.constant(profiles));
  auto loss = ops::weighted_bce(g, y, g.constant(masks), alpha);
  net.params().zero_grad();
  g.backward(loss);
  opt.step(net.params());
  return g.value(loss)[0];
}

template class PredictorNet<float>;
template class PredictorNet<double>;

}  // namespace lpad::segpred
