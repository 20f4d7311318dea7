#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "lpad/adam.hpp"
#include "lpad/imagefeat.hpp"
#include "lpad/ops.hpp"

namespace lpad::policysampler {

using imagefeat::Rect;

inline constexpr int kNumActions = 9;

enum class Action : int { kNorth, kSouth, kEast, kWest, kNorthEast, kNorthWest, kSouthEast, kSouthWest, kSkip };

std::string_view action_name(Action a);

struct PolicyConfig {
  std::vector<int> channels{6, 16, 32, 32, 32};  // conv widths, input first
  int hidden = 64;
  int crop = 128;
  double leaky_slope = 0.2;
};

/// Stride-2 3x3 conv stack with LeakyReLU, then a hidden fully connected
/// layer and a 9-way output layer.
template <typename T>
class PolicyNet {
 public:
  using Var = typename Graph<T>::Var;

  PolicyNet(const PolicyConfig& cfg, Rng& init_rng);

  /// Unnormalized action scores [N,9] for crops [N,6,crop,crop].
  Var logits(Graph<T>& g, Var x);

  /// Action probabilities [9] for one [6,crop,crop] crop; thread-safe.
  std::vector<double> probabilities(const Tensor<T>& crop) const;

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  const PolicyConfig& config() const { return cfg_; }

 private:
  Var build(Graph<T>& g, Var x, ParamSet<T>* bound) const;

  PolicyConfig cfg_;
  int flat_ = 0;
  ParamSet<T> params_;
};

extern template class PolicyNet<float>;
extern template class PolicyNet<double>;

struct Center {
  int y = 0;
  int x = 0;
  bool operator==(const Center&) const = default;
};

/// Square rectangle of side `size` centred on c (top-left = c - size/2).
Rect centered_rect(Center c, int size);

/// Uniform random center whose crop of side `crop` fits the image.
Center random_center(int height, int width, int crop, Rng& rng);

/// Shifts the center by `shift` pixels per axis component and clamps it so the
/// crop stays inside the image. kSkip draws a fresh random center.
Center apply_action(Center c, Action a, int height, int width, int crop, int shift, Rng& rng);

/// max(floor, 1 - j / horizon).
double beta_at(long j, long horizon, double floor = 0.15);

struct RewardBreakdown {
  double r_pred = 0.0;
  double r_clone = 0.0;
  double r_cover = 0.0;
  double beta = 1.0;
  double total = 0.0;
};

/// beta * (r_clone + r_cover) + (1 - beta) * r_pred.
RewardBreakdown combine_reward(double r_pred, double r_clone, double r_cover, double beta);

/// Rewards for selecting `patch` (RGB, [3,p,p]) at `rect`, read against the
/// history before the visit is recorded.
RewardBreakdown compute_reward(const TensorF& patch, const imagefeat::HistoryMap& history, const Rect& rect,
                               double pred_loss, long j, long horizon, double floor = 0.15);

struct TrajectoryStep {
  Center center;       // crop center the action was chosen at
  Center next;         // center after the action
  Rect patch_rect;     // training patch around `next`
  int action = 0;
  double log_prob = 0.0;
  RewardBreakdown reward;
  TensorF state;  // [6,crop,crop]; empty for random-action episodes
};

struct Trajectory {
  std::string image_key;
  std::vector<TrajectoryStep> steps;
};

/// The per-image state an episode reads and updates.
struct SamplerImage {
  std::string key;
  TensorF rgb;       // [3,H,W]
  imagefeat::FusedMap fused;
  TensorF prev_are;  // [1,H,W]
  imagefeat::HistoryMap history;

  TensorF input() const { return imagefeat::build_sampler_input(rgb, fused, history, prev_are); }
};

struct EpisodeConfig {
  int length = 32;
  int crop = 128;
  int patch = 64;
  int shift = 24;
  bool random_actions = false;  // ablation: uniform actions, policy unused
};

struct RewardContext {
  double pred_loss = 0.0;
  long policy_step = 0;
  long horizon = 1000;
  double beta_floor = 0.15;
};

struct Episode {
  Trajectory trajectory;
  TensorF patches;  // [length,3,patch,patch]
};

/// Runs one episode on `image`, recording every visited patch in its history.
Episode run_episode(SamplerImage& image, const PolicyNet<float>& net, const EpisodeConfig& cfg,
                    const RewardContext& ctx, Rng& rng);

struct ReinforceConfig {
  double discount = 1.0;  // 1 = per-step rewards as recorded
  bool baseline = false;  // subtract the trajectory mean of the weights
};

/// Per-step weights multiplying log pi(a_t|s_t).
std::vector<double> step_weights(const Trajectory& t, const ReinforceConfig& cfg);

/// Ascent step on sum_t w_t log pi(a_t|s_t). Returns false without touching
/// the parameters or optimizer when the trajectory is empty or every weight
/// is zero.
bool reinforce_update(PolicyNet<float>& net, Adam<float>& opt, const Trajectory& t, const ReinforceConfig& cfg);

/// One JSON object per step: center, action, reward components.
std::string trajectory_jsonl(const Trajectory& t);

}  // namespace lpad::policysampler
