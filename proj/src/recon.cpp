#include "lpad/recon.hpp"

#include "lpad/init.hpp"

namespace lpad::recon {

template <typename T>
AutoencoderNet<T>::AutoencoderNet(const AutoencoderConfig& cfg, Rng& init_rng) : cfg_(cfg) {
  const auto& ch = cfg_.channels;
  if (ch.size() < 2) throw ConfigError("autoencoder needs at least one encoder layer");
  const int depth = static_cast<int>(ch.size()) - 1;
  if (cfg_.patch % (1 << depth) != 0) {
    throw ConfigError("autoencoder patch size " + std::to_string(cfg_.patch) + " is not divisible by 2^" +
                      std::to_string(depth));
  }
  if (cfg_.dropout < 0.0 || cfg_.dropout >= 1.0) throw ConfigError("autoencoder dropout must be in [0,1)");
  for (int i = 0; i < depth; ++i) {
    const std::string p = "enc" + std::to_string(i);
    params_.add(p + ".w", glorot_uniform<T>({ch[i + 1], ch[i], 3, 3}, init_rng));
    params_.add(p + ".b", Tensor<T>({ch[i + 1]}));
    params_.add(p + ".bn.mean", Tensor<T>({ch[i + 1]}), false);
    params_.add(p + ".bn.var", Tensor<T>({ch[i + 1]}, T{1}), false);
  }
  for (int i = 0; i < depth; ++i) {
    const int in = ch[depth - i], out = ch[depth - i - 1];
    const std::string p = "dec" + std::to_string(i);
    params_.add(p + ".w", glorot_uniform<T>({out, in, 3, 3}, init_rng));
    params_.add(p + ".b", Tensor<T>({out}));
    if (i + 1 < depth) {
      params_.add(p + ".bn.mean", Tensor<T>({out}), false);
      params_.add(p + ".bn.var", Tensor<T>({out}, T{1}), false);
    }
  }
}

template <typename T>
void AutoencoderNet<T>::check_input(const Shape& s) const {
  const int p = cfg_.patch;
  if (s.size() != 4 || s[1] != cfg_.channels.front() || s[2] != p || s[3] != p) {
    throw ConfigError("autoencoder expects [N," + std::to_string(cfg_.channels.front()) + "," + std::to_string(p) +
                      "," + std::to_string(p) + "] patches, got " + shape_str(s));
  }
}

template <typename T>
typename AutoencoderNet<T>::Var AutoencoderNet<T>::build(Graph<T>& g, Var x, bool train, Rng* rng,
                                                         ParamSet<T>* bound) const {
  check_input(g.value(x).shape());
  std::size_t next = 0;
  auto take = [&]() -> Var {
    const std::size_t i = next++;
    return bound != nullptr ? g.param((*bound)[i]) : g.constant(params_[i].value);
  };
  auto norm = [&](Var h) -> Var {
    const std::size_t im = next++, iv = next++;
    if (bound != nullptr) {
      return ops::batchnorm2d(g, h, (*bound)[im].value, (*bound)[iv].value, train, cfg_.batchnorm);
    }
    return ops::batchnorm2d_eval(g, h, params_[im].value, params_[iv].value, cfg_.batchnorm);
  };
  const int depth = static_cast<int>(cfg_.channels.size()) - 1;
  Var h = x;
  for (int i = 0; i < depth; ++i) {
    Var w = take();
    Var b = take();
    h = ops::add_channel_bias(g, ops::conv2d(g, h, w, {.stride = 2, .dilation = 1, .padding = 1}), b);
    h = norm(ops::leaky_relu(g, h, cfg_.leaky_slope));
  }
  if (train && cfg_.dropout > 0.0) {
    if (rng == nullptr) throw InternalError("autoencoder train-mode forward needs a dropout source");
    h = ops::dropout(g, h, cfg_.dropout, true, *rng);
  }
  for (int i = 0; i < depth; ++i) {
    Var w = take();
    Var b = take();
    h = ops::add_channel_bias(g, ops::upsample_conv3x3(g, h, w), b);
    if (i + 1 < depth) {
      h = norm(ops::leaky_relu(g, h, cfg_.leaky_slope));
    } else {
      h = ops::sigmoid(g, h);
    }
  }
  return h;
}

template <typename T>
typename AutoencoderNet<T>::Var AutoencoderNet<T>::forward(Graph<T>& g, Var x, Mode mode, Rng* dropout_rng) {
  return build(g, x, mode == Mode::kTrain, dropout_rng, &params_);
}

template <typename T>
Tensor<T> AutoencoderNet<T>::reconstruct(const Tensor<T>& batch) const {
  Graph<T> g;
  auto out = build(g, g.constant(batch), false, nullptr, nullptr);
  return g.value(out);
}

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double train_step(AutoencoderNet<float>& net, Adam<float>& opt, const TensorF& batch, Rng& dropout_rng) {
  Graph<float> g;
  auto x = g.constant(batch);
  auto y = net.forward(g, x, Mode::kTrain, &dropout_rng);
  auto loss = ops::mse_loss(g, y, x);
  net.params().zero_grad();
  g.backward(loss);
  opt.step(net.params());
  return g.value(loss)[0];
}

LossProfile generate_loss_profile(const TensorF& image, const AutoencoderNet<float>& net, std::string image_id,
                                  std::int64_t generation) {
  TensorF map = tiled_error(image, net.config().patch, [&net](const TensorF& tiles) { return net.reconstruct(tiles); });
  return LossProfile{std::move(map), std::move(image_id), generation};
}

template class AutoencoderNet<float>;
template class AutoencoderNet<double>;
template double mse(const Tensor<float>&, const Tensor<float>&);
template double mse(const Tensor<double>&, const Tensor<double>&);

}  // namespace lpad::recon
