#pragma once

#include <filesystem>

#include "lpad/config.hpp"
#include "lpad/datapipe.hpp"

namespace lpad::testing {

inline datapipe::SynthSpec small_spec() {
  datapipe::SynthSpec s;
  s.category = "tiny";
  s.size = 64;
  s.train_normal = 6;
  s.test_normal = 2;
  s.test_defective = 3;
  s.min_area = 40;
  s.max_area = 200;
  return s;
}

/// A config sized for a 64x64 dataset that trains in a few seconds.
inline TrainConfig small_config(const std::filesystem::path& root) {
  TrainConfig c;
  c.data.root = root;
  c.data.category = "tiny";
  c.data.image_size = 64;
  c.data.labeled_per_group = 2;
  c.data.normal_subset = 2;
  c.schedule.pretrain_steps = 4;
  c.schedule.pool_per_image = 4;
  c.schedule.warm_steps = 3;
  c.schedule.joint_steps = 12;
  c.schedule.predictor_freeze = 4;
  c.schedule.policy_delay = 5;
  c.schedule.regen_period = 3;
  c.autoencoder.channels = {3, 8, 8};
  c.autoencoder.patch = 32;
  c.batch = 4;
  c.predictor.width = 4;
  c.predictor.dilations = {1, 2};
  c.predictor_batch = 4;
  c.predictor_crop = 32;
  c.policy.channels = {6, 4, 4};
  c.policy.hidden = 8;
  c.policy.crop = 32;
  c.shift = 8;
  return c;
}

}  // namespace lpad::testing
