#include <doctest.h>

#include <algorithm>
#include <set>

#include "lpad/orchestrate.hpp"
#include "small_run.hpp"
#include "tempdir.hpp"

using namespace lpad;
using namespace lpad::orchestrate;
using lpad::testing::small_config;
using lpad::testing::small_spec;
using lpad::testing::TempDir;

namespace {

struct Fixture {
  TempDir tmp{"orch"};
  TrainConfig cfg;
  TrainingData data;

  Fixture() {
    datapipe::synth_generate(small_spec(), tmp.path(), 11);
    cfg = small_config(tmp.path());
    data = load_training_data(cfg);
  }
};

}  // namespace

TEST_CASE("training data selection") {
  Fixture f;
  CHECK(f.data.normal_train.size() == 6);
  CHECK(f.data.labeled.size() == 2);
  CHECK(f.data.normal_subset.size() == 2);
  for (const auto& r : f.data.labeled) CHECK(r.anomalous);
  const auto again = load_training_data(f.cfg);
  CHECK(again.normal_subset == f.data.normal_subset);

  std::vector<std::string> labeled;
  for (const auto& r : f.data.labeled) labeled.push_back(r.id);
  const auto eval = load_eval_data(f.cfg, labeled);
  CHECK(eval.size() == 2 + 3 - 2);
  for (const auto& r : eval) CHECK(std::find(labeled.begin(), labeled.end(), r.id) == labeled.end());
}

TEST_CASE("zero pretrain budget keeps initial weights") {
  Fixture f;
  f.cfg.schedule.pretrain_steps = 0;
  RunState run(f.cfg);
  const auto before = run.ae.params().fingerprint();
  pretrain_autoencoder(run, f.data);
  CHECK(run.ae.params().fingerprint() == before);
  CHECK(run.pretrain_steps == 0);
}

TEST_CASE("pretraining sets up fused maps and designated images") {
  Fixture f;
  RunState run(f.cfg);
  const auto before = run.ae.params().fingerprint();
  long steps = 0;
  pretrain_autoencoder(run, f.data, [&](const nlohmann::ordered_json& j) {
    CHECK(j["phase"] == "pretrain");
    ++steps;
  });
  CHECK(steps == 4);
  CHECK(run.pretrain_steps == 4);
  CHECK(run.ae.params().fingerprint() != before);
  CHECK(run.fused.size() == f.data.normal_train.size() + f.data.labeled.size());
  CHECK(run.sampler.size() == f.data.labeled.size() + f.data.normal_subset.size());
  CHECK(run.profiles.size() == run.sampler.size());
  for (std::size_t i = 0; i < run.sampler.size(); ++i) {
    CHECK(run.fused.count(run.sampler[i].key) == 1);
    CHECK(run.profiles[i].profile.image_id == run.sampler[i].key);
    CHECK(run.profiles[i].mask.shape() == Shape{1, 64, 64});
    const bool anomalous = i < f.data.labeled.size();
    float total = 0;
    for (float v : run.profiles[i].mask.values()) total += v;
    CHECK((total > 0) == anomalous);
  }
}

TEST_CASE("schedule windows and counters") {
  Fixture f;
  RunState run(f.cfg);
  pretrain_autoencoder(run, f.data);
  warm_predictor(run);
  CHECK(run.predictor_updates == 3);
  const auto& sch = f.cfg.schedule;
  for (long s = 0; s < sch.joint_steps; ++s) {
    const auto pred = run.predictor.params().fingerprint();
    const auto pol = run.policy.params().fingerprint();
    const long regens = run.regenerations;
    bool policy_flag = false, predictor_flag = false;
    joint_step(run, [&](const nlohmann::ordered_json& j) {
      policy_flag = j["policy_updated"].get<bool>();
      predictor_flag = j["predictor_updated"].get<bool>();
    });
    const bool regen = (s + 1) % sch.regen_period == 0;
    CHECK(run.regenerations == regens + (regen ? 1 : 0));
    CHECK(predictor_flag == (regen && s >= sch.predictor_freeze));
    CHECK((run.predictor.params().fingerprint() != pred) == predictor_flag);
    if (s < sch.policy_delay) CHECK_FALSE(policy_flag);
    CHECK((run.policy.params().fingerprint() != pol) == policy_flag);
  }
  CHECK(run.joint_step == sch.joint_steps);
  CHECK(run.regenerations == sch.joint_steps / sch.regen_period);
  CHECK(run.patches_consumed == (sch.pretrain_steps + sch.joint_steps) * f.cfg.batch);
  for (const auto& p : run.profiles) CHECK(p.profile.generation == run.regenerations);
}

TEST_CASE("random actions never update the policy") {
  Fixture f;
  f.cfg.random_actions = true;
  RunState run(f.cfg);
  const auto pol = run.policy.params().fingerprint();
  train(run, f.data);
  CHECK(run.policy.params().fingerprint() == pol);
  CHECK(run.policy_step == 0);
}

TEST_CASE("warm-up lowers the predictor loss") {
  Fixture f;
  f.cfg.schedule.warm_steps = 60;
  f.cfg.predictor_lr = 1e-2;
  RunState run(f.cfg);
  pretrain_autoencoder(run, f.data);
  std::vector<double> losses;
  warm_predictor(run, [&](const nlohmann::ordered_json& j) { losses.push_back(j["l_pred"].get<double>()); });
  REQUIRE(losses.size() == 60);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += losses[i];
    tail += losses[50 + i];
  }
  CHECK(tail < head);
}

TEST_CASE("evaluation and checkpoints") {
  Fixture f;
  RunState run(f.cfg);
  train(run, f.data);
  std::vector<std::string> labeled;
  for (const auto& r : f.data.labeled) labeled.push_back(r.id);
  const auto images = load_eval_data(f.cfg, labeled);
  const auto res = evaluate(run, images);
  CHECK(res.ids.size() == images.size());
  CHECK(res.report.auc >= 0.0);
  CHECK(res.report.auc <= 1.0);
  CHECK(res.report.positives + res.report.negatives == images.size() * 64 * 64);
  const TensorF pred = predict_image(run, images[0].image);
  CHECK(pred.shape() == Shape{1, 64, 64});

  const auto path = f.tmp.path() / "ck.lprf";
  save_checkpoint(path, run);
  const RunState back = load_checkpoint(path);
  CHECK(back.ae.params().fingerprint() == run.ae.params().fingerprint());
  CHECK(back.predictor.params().fingerprint() == run.predictor.params().fingerprint());
  CHECK(back.policy.params().fingerprint() == run.policy.params().fingerprint());
  CHECK(back.joint_step == run.joint_step);
  CHECK(back.policy_step == run.policy_step);
  CHECK(back.labeled_ids == run.labeled_ids);
  CHECK(evaluate(back, images).report.to_json() == res.report.to_json());

  // Every defective image has both classes, so any threshold split is scorable.
  std::vector<ImageRecord> defective;
  for (const auto& r : images) {
    if (r.anomalous) defective.push_back(r);
  }
  for (const auto& r : f.data.labeled) defective.push_back(r);
  run.cfg.heldout_fraction = 0.5;
  run.cfg.per_image_auc = true;
  const auto held = evaluate(run, defective);
  CHECK(held.report.threshold_mode == "heldout");
  CHECK(held.report.auc_mode == "per_image");
  CHECK(held.report.images.size() == defective.size() - 2);
  CHECK(held.ids.size() == defective.size());
}

TEST_CASE("same seeds give the same run") {
  Fixture f;
  RunState a(f.cfg), b(f.cfg);
  train(a, f.data);
  train(b, f.data);
  CHECK(a.ae.params().fingerprint() == b.ae.params().fingerprint());
  CHECK(a.policy.params().fingerprint() == b.policy.params().fingerprint());
  CHECK(a.last_pred_loss == b.last_pred_loss);
}
