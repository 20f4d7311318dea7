#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpad/config.hpp"
#include "lpad/metrics.hpp"

namespace lpad::orchestrate {

struct ImageRecord {
  std::string id;
  TensorF image;  // [3,S,S]
  TensorF mask;   // [1,S,S], zeros for normal images
  bool anomalous = false;
};

struct TrainingData {
  std::vector<ImageRecord> normal_train;
  std::vector<ImageRecord> labeled;     // labeled anomalies with masks
  std::vector<std::size_t> normal_subset;  // indices into normal_train
};

/// Loads the training split and the labeled anomalies named by the config's
/// selection seed. Throws DataError on layout problems and ConfigError when
/// there are no normal images or no labeled anomalies.
TrainingData load_training_data(const TrainConfig& cfg);

/// Test images that were not used as labeled anomalies.
std::vector<ImageRecord> load_eval_data(const TrainConfig& cfg, const std::vector<std::string>& exclude_ids);

struct ProfileEntry {
  recon::LossProfile profile;
  TensorF mask;
};

using ProgressSink = std::function<void(const nlohmann::ordered_json&)>;

/// Everything a training run mutates.
class RunState {
 public:
  explicit RunState(const TrainConfig& cfg);

  TrainConfig cfg;
  recon::AutoencoderNet<float> ae;
  Adam<float> ae_opt;
  segpred::PredictorNet<float> predictor;
  Adam<float> predictor_opt;
  policysampler::PolicyNet<float> policy;
  Adam<float> policy_opt;

  Rng pretrain_rng;
  Rng dropout_rng;
  Rng sampler_rng;
  Rng predictor_rng;

  long pretrain_steps = 0;
  long warm_steps = 0;
  long joint_step = 0;
  long policy_step = 0;  // j in the beta schedule
  long predictor_updates = 0;
  long regenerations = 0;
  long patches_consumed = 0;
  double last_pred_loss = 0.0;

  std::vector<std::string> labeled_ids;
  /// Frozen fused maps of every training image, keyed by image id.
  std::map<std::string, imagefeat::FusedMap> fused;
  /// Designated images (labeled anomalies, then the normal subset): sampler
  /// state and the latest loss profile with its target mask.
  std::vector<policysampler::SamplerImage> sampler;
  std::vector<ProfileEntry> profiles;
};

/// Trains the autoencoder on random normal crops, then freezes one fused map
/// per training image and sets up the designated sampler images.
void pretrain_autoencoder(RunState& run, const TrainingData& data, const ProgressSink& sink = {});

/// Recomputes every designated profile in eval mode and refreshes the
/// previous-ARE sampler channel.
void regenerate_profiles(RunState& run);

/// Random predictor crops drawn from the designated profiles.
struct PredictorBatch {
  TensorF profiles;  // [K,1,c,c]
  TensorF masks;
};
PredictorBatch sample_predictor_batch(const RunState& run);

/// Predictor warm-up on the initial profiles.
void warm_predictor(RunState& run, const ProgressSink& sink = {});

/// One joint step: episode, autoencoder update, scheduled regeneration and
/// predictor update, then the policy update once feedback is enabled.
void joint_step(RunState& run, const ProgressSink& sink = {});

/// Runs pretrain, warm-up and the joint loop to the configured budgets.
void train(RunState& run, const TrainingData& data, const ProgressSink& sink = {});

struct EvalResult {
  metrics::MetricReport report;
  std::vector<std::string> ids;
  std::vector<TensorF> predictions;  // [1,S,S] probabilities per image
};

/// Profiles and predictor output for every image, pooled into one report.
EvalResult evaluate(const RunState& run, const std::vector<ImageRecord>& images);

/// Probability map for one image.
TensorF predict_image(const RunState& run, const TensorF& image);

void save_checkpoint(const std::filesystem::path& path, const RunState& run);
RunState load_checkpoint(const std::filesystem::path& path);

}  // namespace lpad::orchestrate
