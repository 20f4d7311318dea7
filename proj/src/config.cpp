#include "lpad/config.hpp"

#include <fstream>
#include <set>

namespace lpad {
namespace {

using nlohmann::json;

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown fields.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError("config field '" + display() + "' must be an object");
  }

  bool has(const char* key) const { return obj_.contains(key); }

  Section child(const char* key) {
    seen_.insert(key);
    return Section(obj_.at(key), field(key));
  }

  template <typename V>
  void read(const char* key, V& out) {
    if (!obj_.contains(key)) return;
    seen_.insert(key);
    const json& v = obj_.at(key);
    const std::string f = field(key);
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) throw ConfigError("config field '" + f + "' must be true or false");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<V>) {
      if (!v.is_number_integer()) throw ConfigError("config field '" + f + "' must be an integer");
      if constexpr (std::is_unsigned_v<V>) {
        if (v.is_number_unsigned() || v.get<long long>() >= 0) {
          out = v.get<V>();
        } else {
          throw ConfigError("config field '" + f + "' must be non-negative");
        }
      } else {
        out = v.get<V>();
      }
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) throw ConfigError("config field '" + f + "' must be a number");
      out = v.get<V>();
    } else if constexpr (std::is_same_v<V, std::string>) {
      if (!v.is_string()) throw ConfigError("config field '" + f + "' must be a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_same_v<V, std::filesystem::path>) {
      if (!v.is_string()) throw ConfigError("config field '" + f + "' must be a path string");
      out = v.get<std::string>();
    } else if constexpr (std::is_same_v<V, std::vector<int>>) {
      if (!v.is_array()) throw ConfigError("config field '" + f + "' must be a list of integers");
      std::vector<int> tmp;
      for (const auto& e : v) {
        if (!e.is_number_integer()) throw ConfigError("config field '" + f + "' must be a list of integers");
        tmp.push_back(e.get<int>());
      }
      out = std::move(tmp);
    } else if constexpr (std::is_same_v<V, std::vector<std::string>>) {
      if (!v.is_array()) throw ConfigError("config field '" + f + "' must be a list of strings");
      std::vector<std::string> tmp;
      for (const auto& e : v) {
        if (!e.is_string()) throw ConfigError("config field '" + f + "' must be a list of strings");
        tmp.push_back(e.get<std::string>());
      }
      out = std::move(tmp);
    } else {
      static_assert(sizeof(V) == 0, "unsupported config value type");
    }
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config field '" + field(key.c_str()) + "'");
    }
  }

 private:
  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& field, const std::string& rule) {
  if (!ok) throw ConfigError("config field '" + field + "' " + rule);
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t Seeds::resolved(const std::string& stream) const {
  const std::pair<const char*, std::uint64_t> table[] = {{"selection", selection}, {"init", init},
                                                         {"dropout", dropout},     {"sampler", sampler},
                                                         {"pretrain", pretrain},   {"predictor", predictor}};
  for (std::size_t i = 0; i < std::size(table); ++i) {
    if (stream == table[i].first) return table[i].second != 0 ? table[i].second : splitmix(master * 16 + i + 1);
  }
  throw InternalError("unknown seed stream " + stream);
}

void TrainConfig::validate() const {
  require(data.image_size >= 1, "data.image_size", "must be positive");
  require(data.labeled_per_group >= 1, "data.labeled_per_group", "must be >= 1");
  require(data.normal_subset >= 0, "data.normal_subset", "must be >= 0");
  require(schedule.pretrain_epochs >= 0, "schedule.pretrain_epochs", "must be >= 0");
  require(schedule.pool_per_image >= 1, "schedule.pool_per_image", "must be >= 1");
  require(schedule.warm_steps >= 0, "schedule.warm_steps", "must be >= 0");
  require(schedule.joint_steps >= 0, "schedule.joint_steps", "must be >= 0");
  require(schedule.predictor_freeze >= 0, "schedule.predictor_freeze", "must be >= 0");
  require(schedule.policy_delay >= 0, "schedule.policy_delay", "must be >= 0");
  require(schedule.regen_period >= 1, "schedule.regen_period", "must be >= 1");
  require(schedule.predictor_freeze <= schedule.joint_steps || schedule.joint_steps == 0, "schedule.predictor_freeze",
          "must not exceed schedule.joint_steps");
  require(batch >= 2, "autoencoder.batch", "must be >= 2 (batch statistics)");
  require(ae_lr > 0, "autoencoder.lr", "must be positive");
  require(autoencoder.dropout >= 0 && autoencoder.dropout < 1, "autoencoder.dropout", "must be in [0,1)");
  require(autoencoder.leaky_slope > 0 && autoencoder.leaky_slope < 1, "autoencoder.leaky_slope", "must be in (0,1)");
  require(autoencoder.patch >= 1 && data.image_size % autoencoder.patch == 0, "autoencoder.patch",
          "must divide data.image_size");
  require(predictor_lr > 0, "predictor.lr", "must be positive");
  require(predictor_batch >= 1, "predictor.batch", "must be >= 1");
  require(predictor_crop >= 1 && predictor_crop <= data.image_size, "predictor.crop", "must be in [1, image_size]");
  require(alpha.floor >= 0 && alpha.floor <= alpha.initial, "predictor.alpha_floor", "must be in [0, alpha_initial]");
  require(alpha.horizon >= 1, "predictor.alpha_horizon", "must be >= 1");
  require(policy_lr > 0, "policy.lr", "must be positive");
  require(policy.crop >= autoencoder.patch && policy.crop <= data.image_size, "policy.crop",
          "must lie between autoencoder.patch and data.image_size");
  require(shift >= 0, "policy.shift", "must be >= 0");
  require(beta_floor >= 0 && beta_floor <= 1, "policy.beta_floor", "must be in [0,1]");
  require(beta_horizon >= 1, "policy.beta_horizon", "must be >= 1");
  require(reinforce.discount > 0 && reinforce.discount <= 1, "policy.discount", "must be in (0,1]");
  require(blur_sigma > 0, "features.blur_sigma", "must be positive");
  require(heldout_fraction >= 0 && heldout_fraction < 1, "eval.heldout_fraction", "must be in [0,1)");
}

TrainConfig parse_config(const json& doc) {
  TrainConfig c;
  Section root(doc, "");
  if (root.has("data")) {
    Section s = root.child("data");
    s.read("root", c.data.root);
    s.read("category", c.data.category);
    s.read("image_size", c.data.image_size);
    s.read("labeled_per_group", c.data.labeled_per_group);
    s.read("normal_subset", c.data.normal_subset);
    s.finish();
  }
  if (root.has("seeds")) {
    Section s = root.child("seeds");
    s.read("master", c.seeds.master);
    s.read("selection", c.seeds.selection);
    s.read("init", c.seeds.init);
    s.read("dropout", c.seeds.dropout);
    s.read("sampler", c.seeds.sampler);
    s.read("pretrain", c.seeds.pretrain);
    s.read("predictor", c.seeds.predictor);
    s.finish();
  }
  if (root.has("schedule")) {
    Section s = root.child("schedule");
    s.read("pretrain_steps", c.schedule.pretrain_steps);
    s.read("pretrain_epochs", c.schedule.pretrain_epochs);
    s.read("pool_per_image", c.schedule.pool_per_image);
    s.read("warm_steps", c.schedule.warm_steps);
    s.read("joint_steps", c.schedule.joint_steps);
    s.read("predictor_freeze", c.schedule.predictor_freeze);
    s.read("policy_delay", c.schedule.policy_delay);
    s.read("regen_period", c.schedule.regen_period);
    s.finish();
  }
  if (root.has("autoencoder")) {
    Section s = root.child("autoencoder");
    s.read("channels", c.autoencoder.channels);
    s.read("dropout", c.autoencoder.dropout);
    s.read("leaky_slope", c.autoencoder.leaky_slope);
    s.read("bn_eps", c.autoencoder.batchnorm.eps);
    s.read("bn_momentum", c.autoencoder.batchnorm.momentum);
    s.read("patch", c.autoencoder.patch);
    s.read("lr", c.ae_lr);
    s.read("batch", c.batch);
    s.finish();
  }
  if (root.has("predictor")) {
    Section s = root.child("predictor");
    s.read("width", c.predictor.width);
    s.read("dilations", c.predictor.dilations);
    s.read("leaky_slope", c.predictor.leaky_slope);
    s.read("lr", c.predictor_lr);
    s.read("batch", c.predictor_batch);
    s.read("crop", c.predictor_crop);
    s.read("alpha_initial", c.alpha.initial);
    s.read("alpha_floor", c.alpha.floor);
    s.read("alpha_horizon", c.alpha.horizon);
    s.finish();
  }
  if (root.has("policy")) {
    Section s = root.child("policy");
    s.read("channels", c.policy.channels);
    s.read("hidden", c.policy.hidden);
    s.read("crop", c.policy.crop);
    s.read("leaky_slope", c.policy.leaky_slope);
    s.read("lr", c.policy_lr);
    s.read("shift", c.shift);
    s.read("beta_floor", c.beta_floor);
    s.read("beta_horizon", c.beta_horizon);
    s.read("discount", c.reinforce.discount);
    s.read("baseline", c.reinforce.baseline);
    s.read("random_actions", c.random_actions);
    s.finish();
  }
  if (root.has("features")) {
    Section s = root.child("features");
    s.read("w_mae", c.fusion.mae);
    s.read("w_var", c.fusion.var);
    s.read("w_grad", c.fusion.grad);
    s.read("blur_sigma", c.blur_sigma);
    s.finish();
  }
  if (root.has("eval")) {
    Section s = root.child("eval");
    s.read("per_image", c.per_image_auc);
    s.read("heldout_fraction", c.heldout_fraction);
    s.read("export_masks", c.export_masks);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["data"] = {{"root", data.root.string()},
               {"category", data.category},
               {"image_size", data.image_size},
               {"labeled_per_group", data.labeled_per_group},
               {"normal_subset", data.normal_subset}};
  j["seeds"] = {{"master", seeds.master},
                {"selection", seeds.resolved("selection")},
                {"init", seeds.resolved("init")},
                {"dropout", seeds.resolved("dropout")},
                {"sampler", seeds.resolved("sampler")},
                {"pretrain", seeds.resolved("pretrain")},
                {"predictor", seeds.resolved("predictor")}};
  j["schedule"] = {{"pretrain_steps", schedule.pretrain_steps},
                   {"pretrain_epochs", schedule.pretrain_epochs},
                   {"pool_per_image", schedule.pool_per_image},
                   {"warm_steps", schedule.warm_steps},
                   {"joint_steps", schedule.joint_steps},
                   {"predictor_freeze", schedule.predictor_freeze},
                   {"policy_delay", schedule.policy_delay},
                   {"regen_period", schedule.regen_period}};
  j["autoencoder"] = {{"channels", autoencoder.channels},
                      {"dropout", autoencoder.dropout},
                      {"leaky_slope", autoencoder.leaky_slope},
                      {"bn_eps", autoencoder.batchnorm.eps},
                      {"bn_momentum", autoencoder.batchnorm.momentum},
                      {"patch", autoencoder.patch},
                      {"lr", ae_lr},
                      {"batch", batch}};
  j["predictor"] = {{"width", predictor.width},
                    {"dilations", predictor.dilations},
                    {"leaky_slope", predictor.leaky_slope},
                    {"lr", predictor_lr},
                    {"batch", predictor_batch},
                    {"crop", predictor_crop},
                    {"alpha_initial", alpha.initial},
                    {"alpha_floor", alpha.floor},
                    {"alpha_horizon", alpha.horizon}};
  j["policy"] = {{"channels", policy.channels},
                 {"hidden", policy.hidden},
                 {"crop", policy.crop},
                 {"leaky_slope", policy.leaky_slope},
                 {"lr", policy_lr},
                 {"shift", shift},
                 {"beta_floor", beta_floor},
                 {"beta_horizon", beta_horizon},
                 {"discount", reinforce.discount},
                 {"baseline", reinforce.baseline},
                 {"random_actions", random_actions}};
  j["features"] = {{"w_mae", fusion.mae}, {"w_var", fusion.var}, {"w_grad", fusion.grad}, {"blur_sigma", blur_sigma}};
  j["eval"] = {{"per_image", per_image_auc}, {"heldout_fraction", heldout_fraction}, {"export_masks", export_masks}};
  return j;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(doc);
}

datapipe::SynthSpec parse_synth_spec(const json& doc) {
  datapipe::SynthSpec s;
  Section r(doc, "");
  r.read("category", s.category);
  r.read("size", s.size);
  r.read("train_normal", s.train_normal);
  r.read("test_normal", s.test_normal);
  r.read("test_defective", s.test_defective);
  r.read("texture", s.texture);
  r.read("defects", s.defects);
  r.read("intensity_offset", s.intensity_offset);
  r.read("min_area", s.min_area);
  r.read("max_area", s.max_area);
  r.read("texture_scale", s.texture_scale);
  r.finish();
  return s;
}

}  // namespace lpad
