#include "lpad/orchestrate.hpp"

#include <algorithm>
#include <numeric>

#include "lpad/container.hpp"

namespace lpad::orchestrate {
namespace {

using nlohmann::ordered_json;
using policysampler::SamplerImage;

constexpr std::uint64_t kNormalSubsetSalt = 0x6e6f726d616c5375ULL;
constexpr std::uint64_t kHeldoutSalt = 0x68656c646f7574ULL;

ImageRecord read_record(const datapipe::Entry& e, int size) {
  ImageRecord r;
  r.id = e.id();
  r.image = datapipe::preprocess_image(e.image, size);
  r.anomalous = e.defective();
  r.mask = r.anomalous ? datapipe::preprocess_mask(e.mask, size) : TensorF({1, size, size});
  return r;
}

// First k entries of a uniform permutation of [0, n), sorted.
std::vector<std::size_t> choose(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

AdamConfig adam_with(double lr) {
  AdamConfig c;
  c.lr = lr;
  return c;
}

long pretrain_budget(const TrainConfig& cfg, std::size_t pool) {
  if (cfg.schedule.pretrain_steps >= 0) return cfg.schedule.pretrain_steps;
  const long per_epoch = static_cast<long>((pool + cfg.batch - 1) / cfg.batch);
  return per_epoch * cfg.schedule.pretrain_epochs;
}

void emit(const ProgressSink& sink, const ordered_json& j) {
  if (sink) sink(j);
}

TensorF batch_of(const std::vector<TensorF>& items) {
  const Shape& s = items.front().shape();
  TensorF out({static_cast<int>(items.size()), s[0], s[1], s[2]});
  const std::size_t n = items.front().size();
  for (std::size_t i = 0; i < items.size(); ++i) std::copy_n(items[i].data(), n, out.data() + i * n);
  return out;
}

}  // namespace

TrainingData load_training_data(const TrainConfig& cfg) {
  const auto index = datapipe::load_dataset(cfg.data.root, cfg.data.category);
  const int size = cfg.data.image_size;
  TrainingData data;
  for (std::size_t i : index.select(datapipe::Split::kTrain, false)) {
    data.normal_train.push_back(read_record(index.entries[i], size));
  }
  if (data.normal_train.empty()) throw ConfigError("dataset has no normal training images");
  const auto labeled = datapipe::select_labeled(index, cfg.seeds.resolved("selection"), cfg.data.labeled_per_group);
  for (std::size_t i : labeled.all()) data.labeled.push_back(read_record(index.entries[i], size));
  if (data.labeled.empty()) throw ConfigError("dataset has no defective images to label");
  Rng rng(cfg.seeds.resolved("selection") ^ kNormalSubsetSalt);
  data.normal_subset = choose(data.normal_train.size(), static_cast<std::size_t>(cfg.data.normal_subset), rng);
  return data;
}

std::vector<ImageRecord> load_eval_data(const TrainConfig& cfg, const std::vector<std::string>& exclude_ids) {
  const auto index = datapipe::load_dataset(cfg.data.root, cfg.data.category);
  std::vector<ImageRecord> out;
  for (std::size_t i = 0; i < index.entries.size(); ++i) {
    const auto& e = index.entries[i];
    if (e.split != datapipe::Split::kTest) continue;
    if (std::find(exclude_ids.begin(), exclude_ids.end(), e.id()) != exclude_ids.end()) continue;
    out.push_back(read_record(e, cfg.data.image_size));
  }
  if (out.empty()) throw DataError("no evaluation images left after excluding the labeled set");
  return out;
}

RunState::RunState(const TrainConfig& c)
    : cfg((c.validate(), c)),
      ae([&] {
        Rng init(c.seeds.resolved("init"));
        return recon::AutoencoderNet<float>(c.autoencoder, init);
      }()),
      ae_opt(adam_with(c.ae_lr)),
      predictor([&] {
        Rng init(c.seeds.resolved("init") + 1);
        return segpred::PredictorNet<float>(c.predictor, init);
      }()),
      predictor_opt(adam_with(c.predictor_lr)),
      policy([&] {
        Rng init(c.seeds.resolved("init") + 2);
        return policysampler::PolicyNet<float>(c.policy, init);
      }()),
      policy_opt(adam_with(c.policy_lr)),
      pretrain_rng(c.seeds.resolved("pretrain")),
      dropout_rng(c.seeds.resolved("dropout")),
      sampler_rng(c.seeds.resolved("sampler")),
      predictor_rng(c.seeds.resolved("predictor")) {}

void pretrain_autoencoder(RunState& run, const TrainingData& data, const ProgressSink& sink) {
  const int p = run.cfg.autoencoder.patch;
  const int size = run.cfg.data.image_size;
  struct PoolItem {
    std::size_t image;
    imagefeat::Rect rect;
  };
  std::vector<PoolItem> pool;
  for (std::size_t i = 0; i < data.normal_train.size(); ++i) {
    for (int k = 0; k < run.cfg.schedule.pool_per_image; ++k) {
      const int top = run.pretrain_rng.between(0, size - p);
      const int left = run.pretrain_rng.between(0, size - p);
      pool.push_back({i, {top, left, p, p}});
    }
  }
  const long steps = pretrain_budget(run.cfg, pool.size());
  std::size_t cursor = pool.size();
  std::vector<TensorF> items;
  for (long s = 0; s < steps; ++s) {
    items.clear();
    for (int b = 0; b < run.cfg.batch; ++b) {
      if (cursor == pool.size()) {
        for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[run.pretrain_rng.below(i)]);
        cursor = 0;
      }
      const auto& it = pool[cursor++];
      items.push_back(imagefeat::crop(data.normal_train[it.image].image, it.rect));
    }
    const double loss = recon::train_step(run.ae, run.ae_opt, batch_of(items), run.dropout_rng);
    ++run.pretrain_steps;
    run.patches_consumed += run.cfg.batch;
    emit(sink, ordered_json{{"phase", "pretrain"}, {"step", s}, {"l_mse", loss}});
  }

  run.fused.clear();
  auto fuse = [&](const ImageRecord& r) {
    auto prof = recon::generate_loss_profile(r.image, run.ae, r.id, 0);
    run.fused[r.id] = imagefeat::build_fused_map(r.image, prof.map, run.cfg.fusion, run.cfg.blur_sigma);
    return prof;
  };
  for (const auto& r : data.normal_train) fuse(r);

  // Designated sampler images: labeled anomalies, then the normal subset.
  run.sampler.clear();
  run.profiles.clear();
  run.labeled_ids.clear();
  auto designate = [&](const ImageRecord& r, recon::LossProfile prof) {
    SamplerImage si;
    si.key = r.id;
    si.rgb = r.image;
    si.fused = run.fused.at(r.id);
    si.prev_are = prof.map;
    si.history = imagefeat::HistoryMap(size, size, r.id);
    run.sampler.push_back(std::move(si));
    run.profiles.push_back({std::move(prof), r.mask});
  };
  for (const auto& r : data.labeled) {
    run.labeled_ids.push_back(r.id);
    designate(r, fuse(r));
  }
  for (std::size_t i : data.normal_subset) {
    const auto& r = data.normal_train[i];
    designate(r, recon::generate_loss_profile(r.image, run.ae, r.id, 0));
  }
}

void regenerate_profiles(RunState& run) {
  ++run.regenerations;
  for (std::size_t i = 0; i < run.sampler.size(); ++i) {
    auto prof = recon::generate_loss_profile(run.sampler[i].rgb, run.ae, run.sampler[i].key, run.regenerations);
    run.sampler[i].prev_are = prof.map;
    run.profiles[i].profile = std::move(prof);
  }
}

PredictorBatch sample_predictor_batch(const RunState& run) {
  if (run.profiles.empty()) throw InternalError("predictor batch requested before profiles exist");
  Rng& rng = const_cast<Rng&>(run.predictor_rng);
  const int k = run.cfg.predictor_batch;
  const int c = run.cfg.predictor_crop;
  PredictorBatch b{TensorF({k, 1, c, c}), TensorF({k, 1, c, c})};
  for (int n = 0; n < k; ++n) {
    const auto& e = run.profiles[rng.below(run.profiles.size())];
    const int h = e.mask.dim(1), w = e.mask.dim(2);
    const imagefeat::Rect r{rng.between(0, h - c), rng.between(0, w - c), c, c};
    const TensorF p = imagefeat::crop(e.profile.map, r);
    const TensorF m = imagefeat::crop(e.mask, r);
    std::copy_n(p.data(), p.size(), &b.profiles.at(n, 0, 0, 0));
    std::copy_n(m.data(), m.size(), &b.masks.at(n, 0, 0, 0));
  }
  return b;
}

void warm_predictor(RunState& run, const ProgressSink& sink) {
  for (long s = 0; s < run.cfg.schedule.warm_steps; ++s) {
    const auto b = sample_predictor_batch(run);
    const double alpha = segpred::alpha_at(run.predictor_updates, run.cfg.alpha);
    run.last_pred_loss = segpred::train_step(run.predictor, run.predictor_opt, b.profiles, b.masks, alpha);
    ++run.predictor_updates;
    ++run.warm_steps;
    emit(sink, ordered_json{{"phase", "warm"}, {"step", s}, {"l_pred", run.last_pred_loss}, {"alpha", alpha}});
  }
}

void joint_step(RunState& run, const ProgressSink& sink) {
  if (run.sampler.empty()) throw InternalError("joint step before pretraining");
  const auto& sch = run.cfg.schedule;
  const long s = run.joint_step;

  policysampler::EpisodeConfig ec;
  ec.length = run.cfg.batch;
  ec.crop = run.cfg.policy.crop;
  ec.patch = run.cfg.autoencoder.patch;
  ec.shift = run.cfg.shift;
  ec.random_actions = run.cfg.random_actions;
  const policysampler::RewardContext ctx{run.last_pred_loss, run.policy_step, run.cfg.beta_horizon,
                                         run.cfg.beta_floor};
  auto& image = run.sampler[run.sampler_rng.below(run.sampler.size())];
  const auto ep = policysampler::run_episode(image, run.policy, ec, ctx, run.sampler_rng);

  const double l_mse = recon::train_step(run.ae, run.ae_opt, ep.patches, run.dropout_rng);
  run.patches_consumed += ec.length;

  bool regenerated = false, predictor_updated = false;
  double alpha = segpred::alpha_at(run.predictor_updates, run.cfg.alpha);
  if ((s + 1) % sch.regen_period == 0) {
    regenerate_profiles(run);
    regenerated = true;
    const auto b = sample_predictor_batch(run);
    if (s >= sch.predictor_freeze) {
      run.last_pred_loss = segpred::train_step(run.predictor, run.predictor_opt, b.profiles, b.masks, alpha);
      ++run.predictor_updates;
      predictor_updated = true;
    } else {
      run.last_pred_loss = segpred::bce_value(run.predictor.predict(b.profiles), b.masks, alpha);
    }
  }

  bool policy_updated = false;
  if (!run.cfg.random_actions && s >= sch.policy_delay) {
    policy_updated = policysampler::reinforce_update(run.policy, run.policy_opt, ep.trajectory, run.cfg.reinforce);
    if (policy_updated) ++run.policy_step;
  }
  ++run.joint_step;

  if (sink) {
    policysampler::RewardBreakdown mean;
    for (const auto& st : ep.trajectory.steps) {
      mean.r_pred += st.reward.r_pred;
      mean.r_clone += st.reward.r_clone;
      mean.r_cover += st.reward.r_cover;
      mean.total += st.reward.total;
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, ep.trajectory.steps.size()));
    sink(ordered_json{{"phase", "joint"},
                      {"step", s},
                      {"image", image.key},
                      {"l_mse", l_mse},
                      {"l_pred", run.last_pred_loss},
                      {"alpha", alpha},
                      {"beta", policysampler::beta_at(ctx.policy_step, ctx.horizon, ctx.beta_floor)},
                      {"r_pred", mean.r_pred / n},
                      {"r_clone", mean.r_clone / n},
                      {"r_cover", mean.r_cover / n},
                      {"reward", mean.total / n},
                      {"regenerated", regenerated},
                      {"predictor_updated", predictor_updated},
                      {"policy_updated", policy_updated},
                      {"patches", run.patches_consumed}});
  }
}

void train(RunState& run, const TrainingData& data, const ProgressSink& sink) {
  pretrain_autoencoder(run, data, sink);
  warm_predictor(run, sink);
  while (run.joint_step < run.cfg.schedule.joint_steps) joint_step(run, sink);
}

TensorF predict_image(const RunState& run, const TensorF& image) {
  const auto prof = recon::generate_loss_profile(image, run.ae, "", 0);
  return run.predictor.predict(prof.map.reshaped({1, 1, image.dim(1), image.dim(2)}))
      .reshaped({1, image.dim(1), image.dim(2)});
}

EvalResult evaluate(const RunState& run, const std::vector<ImageRecord>& images) {
  EvalResult res;
  std::vector<metrics::EvalPair> per_image;
  for (const auto& r : images) {
    TensorF pred = predict_image(run, r.image);
    metrics::EvalPair one;
    one.append(pred.values(), r.mask.values(), r.id);
    per_image.push_back(std::move(one));
    res.ids.push_back(r.id);
    res.predictions.push_back(std::move(pred));
  }

  // Threshold split: the first share of a seeded permutation picks the
  // threshold, the rest is scored.
  std::vector<std::size_t> fit, score;
  if (run.cfg.heldout_fraction > 0.0) {
    Rng rng(run.cfg.seeds.resolved("selection") ^ kHeldoutSalt);
    const auto n = images.size();
    const auto k = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::ceil(run.cfg.heldout_fraction * static_cast<double>(n))), 1, n - 1);
    fit = choose(n, k, rng);
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::binary_search(fit.begin(), fit.end(), i)) score.push_back(i);
    }
  } else {
    score.resize(images.size());
    std::iota(score.begin(), score.end(), std::size_t{0});
  }
  auto pool = [&](const std::vector<std::size_t>& idx) {
    metrics::EvalPair p;
    for (std::size_t i : idx) {
      p.scores.insert(p.scores.end(), per_image[i].scores.begin(), per_image[i].scores.end());
      p.labels.insert(p.labels.end(), per_image[i].labels.begin(), per_image[i].labels.end());
      p.image_ids.push_back(res.ids[i]);
    }
    return p;
  };

  const auto scored = pool(score);
  auto& rep = res.report;
  rep.images = scored.image_ids;
  for (auto l : scored.labels) (l ? rep.positives : rep.negatives) += 1;
  if (fit.empty()) {
    const auto f = metrics::f1_max(scored.scores, scored.labels);
    rep.f1_max = f.f1;
    rep.best_threshold = f.threshold;
  } else {
    const auto fitted = pool(fit);
    rep.best_threshold = metrics::f1_max(fitted.scores, fitted.labels).threshold;
    rep.f1_max = metrics::f1_at(scored.scores, scored.labels, rep.best_threshold);
    rep.threshold_mode = "heldout";
  }
  if (run.cfg.per_image_auc) {
    std::vector<metrics::EvalPair> subset;
    for (std::size_t i : score) subset.push_back(per_image[i]);
    rep.auc = metrics::per_image_auc(subset);
    rep.auc_mode = "per_image";
  } else {
    rep.auc = metrics::auc(scored.scores, scored.labels);
  }
  return res;
}

namespace {

template <typename T>
void put_params(datapipe::Container& c, const std::string& prefix, const ParamSet<T>& ps) {
  for (std::size_t i = 0; i < ps.size(); ++i) c.put(prefix + "/" + ps[i].name, ps[i].value);
}

template <typename T>
void get_params(const datapipe::Container& c, const std::string& prefix, ParamSet<T>& ps) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    TensorF v = c.f32(prefix + "/" + ps[i].name);
    if (v.shape() != ps[i].value.shape()) {
      throw PersistenceError("checkpoint array " + prefix + "/" + ps[i].name + " has shape " + shape_str(v.shape()) +
                             ", expected " + shape_str(ps[i].value.shape()));
    }
    ps[i].value = std::move(v);
  }
}

void put_adam(datapipe::Container& c, const std::string& prefix, const Adam<float>& opt) {
  c.put_i64(prefix + "/steps", {opt.steps()});
  for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
    c.put(prefix + "/m/" + std::to_string(i), opt.first_moments()[i]);
    c.put(prefix + "/v/" + std::to_string(i), opt.second_moments()[i]);
  }
}

void get_adam(const datapipe::Container& c, const std::string& prefix, Adam<float>& opt) {
  const auto steps = c.i64(prefix + "/steps").at(0);
  std::vector<TensorF> m, v;
  for (std::size_t i = 0; c.has(prefix + "/m/" + std::to_string(i)); ++i) {
    m.push_back(c.f32(prefix + "/m/" + std::to_string(i)));
    v.push_back(c.f32(prefix + "/v/" + std::to_string(i)));
  }
  opt.restore(steps, std::move(m), std::move(v));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const RunState& run) {
  datapipe::Container c;
  c.meta["kind"] = "lpad-checkpoint";
  c.meta["config"] = run.cfg.to_json();
  c.meta["labeled"] = run.labeled_ids;
  std::vector<std::string> keys;
  for (const auto& s : run.sampler) keys.push_back(s.key);
  c.meta["designated"] = keys;

  put_params(c, "ae", run.ae.params());
  put_params(c, "predictor", run.predictor.params());
  put_params(c, "policy", run.policy.params());
  put_adam(c, "adam/ae", run.ae_opt);
  put_adam(c, "adam/predictor", run.predictor_opt);
  put_adam(c, "adam/policy", run.policy_opt);
  c.put_i64("counters", {run.pretrain_steps, run.warm_steps, run.joint_step, run.policy_step, run.predictor_updates,
                         run.regenerations, run.patches_consumed});
  TensorD lp({1});
  lp[0] = run.last_pred_loss;
  c.put("last_pred_loss", lp);
  for (std::size_t i = 0; i < run.sampler.size(); ++i) {
    const auto& s = run.sampler[i];
    const std::string k = "sampler/" + std::to_string(i);
    c.put_u32(k + "/history", {s.history.height(), s.history.width()},
              std::vector<std::uint32_t>(s.history.counts().begin(), s.history.counts().end()));
    c.put(k + "/fused", s.fused.values);
    c.put(k + "/prev_are", s.prev_are);
    c.put(k + "/profile", run.profiles[i].profile.map);
    c.put(k + "/mask", run.profiles[i].mask);
    c.put_i64(k + "/generation", {run.profiles[i].profile.generation});
  }
  datapipe::save_container(path, c);
}

RunState load_checkpoint(const std::filesystem::path& path) {
  const auto c = datapipe::load_container(path);
  if (c.meta.value("kind", "") != "lpad-checkpoint") throw PersistenceError(path.string() + " is not a checkpoint");
  RunState run(parse_config(nlohmann::json::parse(c.meta.at("config").dump())));
  get_params(c, "ae", run.ae.params());
  get_params(c, "predictor", run.predictor.params());
  get_params(c, "policy", run.policy.params());
  get_adam(c, "adam/ae", run.ae_opt);
  get_adam(c, "adam/predictor", run.predictor_opt);
  get_adam(c, "adam/policy", run.policy_opt);
  const auto k = c.i64("counters");
  if (k.size() != 7) throw PersistenceError("checkpoint counters have " + std::to_string(k.size()) + " entries");
  run.pretrain_steps = k[0];
  run.warm_steps = k[1];
  run.joint_step = k[2];
  run.policy_step = k[3];
  run.predictor_updates = k[4];
  run.regenerations = k[5];
  run.patches_consumed = k[6];
  run.last_pred_loss = c.f64("last_pred_loss")[0];
  run.labeled_ids = c.meta.at("labeled").get<std::vector<std::string>>();
  const auto keys = c.meta.at("designated").get<std::vector<std::string>>();
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const std::string p = "sampler/" + std::to_string(i);
    SamplerImage s;
    s.key = keys[i];
    s.fused = {c.f32(p + "/fused"), run.cfg.fusion};
    s.prev_are = c.f32(p + "/prev_are");
    s.history = imagefeat::HistoryMap(s.prev_are.dim(1), s.prev_are.dim(2), keys[i]);
    s.history.restore(c.u32(p + "/history"));
    ProfileEntry e{{c.f32(p + "/profile"), keys[i], c.i64(p + "/generation").at(0)}, c.f32(p + "/mask")};
    run.sampler.push_back(std::move(s));
    run.profiles.push_back(std::move(e));
  }
  return run;
}

}  // namespace lpad::orchestrate
