#include "lpad/policysampler.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "lpad/init.hpp"

namespace lpad::policysampler {

std::string_view action_name(Action a) {
  static constexpr std::array<std::string_view, kNumActions> kNames{"N", "S", "E", "W", "NE", "NW", "SE", "SW", "SKIP"};
  return kNames.at(static_cast<std::size_t>(a));
}

template <typename T>
PolicyNet<T>::PolicyNet(const PolicyConfig& cfg, Rng& init_rng) : cfg_(cfg) {
  const auto& ch = cfg_.channels;
  if (ch.size() < 2 || ch.front() != 6) throw ConfigError("policy conv widths must start at 6 input channels");
  int side = cfg_.crop;
  for (std::size_t i = 0; i + 1 < ch.size(); ++i) {
    const std::string p = "conv" + std::to_string(i);
    params_.add(p + ".w", glorot_uniform<T>({ch[i + 1], ch[i], 3, 3}, init_rng));
    params_.add(p + ".b", Tensor<T>({ch[i + 1]}));
    side = ops::conv_out_extent(side, 3, 2, 1, 1);
    if (side < 1) throw ConfigError("policy crop " + std::to_string(cfg_.crop) + " is too small");
  }
  flat_ = ch.back() * side * side;
  params_.add("fc.w", glorot_uniform<T>({cfg_.hidden, flat_}, init_rng));
  params_.add("fc.b", Tensor<T>({cfg_.hidden}));
  params_.add("out.w", glorot_uniform<T>({kNumActions, cfg_.hidden}, init_rng));
  params_.add("out.b", Tensor<T>({kNumActions}));
}

template <typename T>
typename PolicyNet<T>::Var PolicyNet<T>::build(Graph<T>& g, Var x, ParamSet<T>* bound) const {
  const Shape s = g.value(x).shape();
  if (s.size() != 4 || s[1] != 6 || s[2] != cfg_.crop || s[3] != cfg_.crop) {
    throw ConfigError("policy expects [N,6," + std::to_string(cfg_.crop) + "," + std::to_string(cfg_.crop) +
                      "] crops, got " + shape_str(s));
  }
  std::size_t next = 0;
  auto take = [&]() -> Var {
    const std::size_t i = next++;
    return bound != nullptr ? g.param((*bound)[i]) : g.constant(params_[i].value);
  };
  Var h = x;
  for (std::size_t i = 0; i + 1 < cfg_.channels.size(); ++i) {
    Var w = take();
    Var b = take();
    h = ops::add_channel_bias(g, ops::conv2d(g, h, w, {.stride = 2, .dilation = 1, .padding = 1}), b);
    h = ops::leaky_relu(g, h, cfg_.leaky_slope);
  }
  h = ops::reshape(g, h, {s[0], flat_});
  {
    Var w = take();
    Var b = take();
    h = ops::leaky_relu(g, ops::add_channel_bias(g, ops::linear(g, h, w), b), cfg_.leaky_slope);
  }
  Var w = take();
  Var b = take();
  return ops::add_channel_bias(g, ops::linear(g, h, w), b);
}

template <typename T>
typename PolicyNet<T>::Var PolicyNet<T>::logits(Graph<T>& g, Var x) {
  return build(g, x, &params_);
}

template <typename T>
std::vector<double> PolicyNet<T>::probabilities(const Tensor<T>& crop) const {
  if (crop.rank() != 3) throw ConfigError("policy expects a [6,H,W] crop, got " + shape_str(crop.shape()));
  Graph<T> g;
  auto x = g.constant(crop.reshaped({1, crop.dim(0), crop.dim(1), crop.dim(2)}));
  const Tensor<T>& p = g.value(ops::softmax(g, build(g, x, nullptr)));
  return std::vector<double>(p.values().begin(), p.values().end());
}

template class PolicyNet<float>;
template class PolicyNet<double>;

Rect centered_rect(Center c, int size) { return Rect{c.y - size / 2, c.x - size / 2, size, size}; }

Center random_center(int height, int width, int crop, Rng& rng) {
  if (height < crop || width < crop) {
    throw ConfigError("image " + std::to_string(height) + "x" + std::to_string(width) + " is smaller than the " +
                      std::to_string(crop) + " px crop");
  }
  const int lo = crop / 2;
  const int y = rng.between(lo, height - (crop - lo));
  const int x = rng.between(lo, width - (crop - lo));
  return Center{y, x};
}

Center apply_action(Center c, Action a, int height, int width, int crop, int shift, Rng& rng) {
  if (a == Action::kSkip) return random_center(height, width, crop, rng);
  int dy = 0, dx = 0;
  switch (a) {
    case Action::kNorth: dy = -1; break;
    case Action::kSouth: dy = 1; break;
    case Action::kEast: dx = 1; break;
    case Action::kWest: dx = -1; break;
    case Action::kNorthEast: dy = -1; dx = 1; break;
    case Action::kNorthWest: dy = -1; dx = -1; break;
    case Action::kSouthEast: dy = 1; dx = 1; break;
    case Action::kSouthWest: dy = 1; dx = -1; break;
    case Action::kSkip: break;
  }
  const int lo = crop / 2;
  return Center{std::clamp(c.y + dy * shift, lo, height - (crop - lo)),
                std::clamp(c.x + dx * shift, lo, width - (crop - lo))};
}

double beta_at(long j, long horizon, double floor) {
  if (horizon < 1) throw ConfigError("beta horizon L must be >= 1");
  if (j < 0) throw ConfigError("beta schedule step must be >= 0");
  return std::max(floor, 1.0 - static_cast<double>(j) / static_cast<double>(horizon));
}

RewardBreakdown combine_reward(double r_pred, double r_clone, double r_cover, double beta) {
  RewardBreakdown r{r_pred, r_clone, r_cover, beta, 0.0};
  r.total = beta * (r_clone + r_cover) + (1.0 - beta) * r_pred;
  return r;
}

RewardBreakdown compute_reward(const TensorF& patch, const imagefeat::HistoryMap& history, const Rect& rect,
                               double pred_loss, long j, long horizon, double floor) {
  const TensorF grad = imagefeat::sobel_magnitude(patch);
  double s = 0.0;
  for (float v : grad.values()) s += v;
  const double r_clone = s / static_cast<double>(grad.size());
  const double r_cover = -history.normalized_mean(rect);
  return combine_reward(-pred_loss, r_clone, r_cover, beta_at(j, horizon, floor));
}

namespace {

int sample_index(const std::vector<double>& probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  // Rounding left u above the cumulative sum: take the last nonzero entry.
  for (std::size_t i = probs.size(); i-- > 0;) {
    if (probs[i] > 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace

Episode run_episode(SamplerImage& image, const PolicyNet<float>& net, const EpisodeConfig& cfg,
                    const RewardContext& ctx, Rng& rng) {
  if (cfg.length < 1) throw ConfigError("episode length must be >= 1");
  if (cfg.patch > cfg.crop) throw ConfigError("training patch must fit inside the policy crop");
  const int h = image.rgb.dim(1), w = image.rgb.dim(2);
  Episode ep;
  ep.trajectory.image_key = image.key;
  ep.patches = TensorF({cfg.length, image.rgb.dim(0), cfg.patch, cfg.patch});
  const std::size_t patch_size = static_cast<std::size_t>(image.rgb.dim(0)) * cfg.patch * cfg.patch;
  Center c = random_center(h, w, cfg.crop, rng);
  for (int t = 0; t < cfg.length; ++t) {
    TrajectoryStep step;
    step.center = c;
    if (cfg.random_actions) {
      step.action = static_cast<int>(rng.below(kNumActions));
      step.log_prob = -std::log(static_cast<double>(kNumActions));
    } else {
      step.state = imagefeat::crop(image.input(), centered_rect(c, cfg.crop));
      const auto probs = net.probabilities(step.state);
      step.action = sample_index(probs, rng);
      step.log_prob = std::log(probs[static_cast<std::size_t>(step.action)]);
    }
    step.next = apply_action(c, static_cast<Action>(step.action), h, w, cfg.crop, cfg.shift, rng);
    step.patch_rect = centered_rect(step.next, cfg.patch);
    const TensorF patch = imagefeat::crop(image.rgb, step.patch_rect);
    std::copy(patch.data(), patch.data() + patch_size, ep.patches.data() + t * patch_size);
    step.reward = compute_reward(patch, image.history, step.patch_rect, ctx.pred_loss, ctx.policy_step, ctx.horizon,
                                 ctx.beta_floor);
    image.history.visit(step.patch_rect);
    c = step.next;
    ep.trajectory.steps.push_back(std::move(step));
  }
  return ep;
}

std::vector<double> step_weights(const Trajectory& t, const ReinforceConfig& cfg) {
  const std::size_t n = t.steps.size();
  std::vector<double> w(n);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    running = cfg.discount == 1.0 ? t.steps[i].reward.total : t.steps[i].reward.total + cfg.discount * running;
    w[i] = running;
  }
  if (cfg.baseline && n > 0) {
    double mean = 0.0;
    for (double v : w) mean += v;
    mean /= static_cast<double>(n);
    for (double& v : w) v -= mean;
  }
  return w;
}

bool reinforce_update(PolicyNet<float>& net, Adam<float>& opt, const Trajectory& t, const ReinforceConfig& cfg) {
  if (t.steps.empty()) return false;
  const std::vector<double> w = step_weights(t, cfg);
  if (std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0; })) return false;
  const int n = static_cast<int>(t.steps.size());
  const Shape& ss = t.steps.front().state.shape();
  if (ss.size() != 3) throw InternalError("trajectory has no recorded policy states");
  const std::size_t stride = t.steps.front().state.size();
  TensorF states({n, ss[0], ss[1], ss[2]});
  std::vector<int> actions(n);
  std::vector<double> neg(n);
  for (int i = 0; i < n; ++i) {
    const auto& st = t.steps[i];
    require_same_shape(st.state.shape(), ss, "trajectory state");
    std::copy(st.state.data(), st.state.data() + stride, states.data() + i * stride);
    actions[i] = st.action;
    neg[i] = -w[i];
  }
  Graph<float> g;
  auto lp = ops::log_softmax(g, net.logits(g, g.constant(std::move(states))));
  auto loss = ops::pick_weighted_sum(g, lp, actions, neg);
  net.params().zero_grad();
  g.backward(loss);
  opt.step(net.params());
  return true;
}

std::string trajectory_jsonl(const Trajectory& t) {
  std::ostringstream os;
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const auto& s = t.steps[i];
    nlohmann::json j{{"image", t.image_key},
                     {"t", i},
                     {"center", {s.center.y, s.center.x}},
                     {"next", {s.next.y, s.next.x}},
                     {"action", action_name(static_cast<Action>(s.action))},
                     {"log_prob", s.log_prob},
                     {"r_pred", s.reward.r_pred},
                     {"r_clone", s.reward.r_clone},
                     {"r_cover", s.reward.r_cover},
                     {"beta", s.reward.beta},
                     {"total", s.reward.total}};
    os << j.dump() << '\n';
  }
  return os.str();
}

}  // namespace lpad::policysampler
