#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "lpad/datapipe.hpp"
#include "lpad/imagefeat.hpp"
#include "lpad/policysampler.hpp"
#include "lpad/recon.hpp"
#include "lpad/segpred.hpp"

namespace lpad {

/// Named random streams. A zero entry is derived from the master seed.
struct Seeds {
  std::uint64_t master = 1;
  std::uint64_t selection = 0;  // labeled subset and normal subset
  std::uint64_t init = 0;       // weight initialization
  std::uint64_t dropout = 0;
  std::uint64_t sampler = 0;    // episode starts, actions, SKIP resampling
  std::uint64_t pretrain = 0;   // crop pool and shuffling
  std::uint64_t predictor = 0;  // predictor crop sampling

  /// The effective value of a stream after derivation.
  std::uint64_t resolved(const std::string& stream) const;
};

struct DataConfig {
  std::filesystem::path root;
  std::string category = "synthetic";
  int image_size = 256;
  int labeled_per_group = 5;
  int normal_subset = 10;
};

struct ScheduleConfig {
  long pretrain_steps = -1;  // < 0: derive from pretrain_epochs
  int pretrain_epochs = 100;
  int pool_per_image = 50;
  long warm_steps = 200;
  long joint_steps = 1000;
  long predictor_freeze = 50;
  long policy_delay = 100;
  long regen_period = 10;
};

struct TrainConfig {
  DataConfig data;
  Seeds seeds;
  ScheduleConfig schedule;

  recon::AutoencoderConfig autoencoder;
  double ae_lr = 1e-3;
  int batch = 32;

  segpred::PredictorConfig predictor;
  double predictor_lr = 1e-3;
  int predictor_batch = 32;
  int predictor_crop = 64;  // image size recovers full-profile training
  segpred::AlphaSchedule alpha;

  policysampler::PolicyConfig policy;
  double policy_lr = 1e-3;
  int shift = 24;
  double beta_floor = 0.15;
  long beta_horizon = 1000;
  policysampler::ReinforceConfig reinforce;
  bool random_actions = false;

  imagefeat::FusionWeights fusion;
  double blur_sigma = 2.0;

  bool per_image_auc = false;
  double heldout_fraction = 0.0;  // > 0: threshold picked on this share of eval images
  bool export_masks = true;

  /// Cross-field checks; throws ConfigError naming the field.
  void validate() const;
  nlohmann::ordered_json to_json() const;
};

/// Parses a config document. Unknown or mistyped fields raise ConfigError
/// naming the dotted field path. Missing fields keep their defaults.
TrainConfig parse_config(const nlohmann::json& doc);
TrainConfig load_config(const std::filesystem::path& path);

/// Same strictness for synthetic-dataset specs.
datapipe::SynthSpec parse_synth_spec(const nlohmann::json& doc);

}  // namespace lpad
