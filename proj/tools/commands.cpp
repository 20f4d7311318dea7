#include "commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lpad/config.hpp"
#include "lpad/orchestrate.hpp"

namespace lpad::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string g_command_line;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

void write_manifest(const fs::path& out, const std::string& command, const std::string& config_path,
                    const ordered_json& resolved, ordered_json extra = ordered_json::object()) {
  ordered_json m;
  m["command"] = command;
  m["build"] = LPAD_BUILD_TAG;
  m["command_line"] = g_command_line;
  m["output"] = fs::absolute(out).lexically_normal().string();
  m["config_path"] = config_path;
  m["config"] = resolved;
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_text(out / "manifest.json", m.dump(2) + "\n");
}

fs::path mask_path(const fs::path& dir, const std::string& id) { return dir / (id + ".png"); }

int guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const PersistenceError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitData;
  } catch (const MetricError& e) {
    std::cerr << "metric error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace

int cmd_train(const TrainArgs& a) {
  return guarded([&] {
    TrainConfig cfg = load_config(a.config);
    if (a.seed) cfg.seeds.master = *a.seed;
    if (a.per_image) cfg.per_image_auc = true;
    cfg.validate();
    const auto data = orchestrate::load_training_data(cfg);
    orchestrate::RunState run(cfg);

    const fs::path out(a.out);
    fs::create_directories(out);
    write_manifest(out, "train", a.config, cfg.to_json());
    std::ofstream log(out / "progress.jsonl");
    if (!log) throw DataError("cannot write " + (out / "progress.jsonl").string());
    orchestrate::train(run, data, [&log](const ordered_json& j) { log << j.dump() << '\n' << std::flush; });
    orchestrate::save_checkpoint(out / "checkpoint.lprf", run);
    std::cout << "checkpoint " << (out / "checkpoint.lprf").string() << "\n";
    return kExitOk;
  });
}

int cmd_eval(const EvalArgs& a) {
  return guarded([&] {
    auto run = orchestrate::load_checkpoint(a.checkpoint);
    if (!a.data.empty()) run.cfg.data.root = a.data;
    if (a.per_image) run.cfg.per_image_auc = true;
    if (a.heldout) run.cfg.heldout_fraction = *a.heldout;
    run.cfg.validate();
    const auto images = orchestrate::load_eval_data(run.cfg, run.labeled_ids);
    const auto res = orchestrate::evaluate(run, images);

    const fs::path out(a.out);
    fs::create_directories(out);
    write_text(out / "metrics.json", res.report.to_json());
    if (run.cfg.export_masks) {
      for (std::size_t i = 0; i < res.ids.size(); ++i) {
        const auto p = mask_path(out / "masks", res.ids[i]);
        fs::create_directories(p.parent_path());
        datapipe::write_map_png(p, res.predictions[i]);
      }
    }
    write_manifest(out, "eval", "", run.cfg.to_json(), {{"checkpoint", a.checkpoint}});
    std::cout << res.report.to_json();
    return kExitOk;
  });
}

int cmd_synth(const SynthArgs& a) {
  return guarded([&] {
    std::ifstream in(a.config);
    if (!in) throw ConfigError("cannot open synth spec " + a.config);
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("synth spec " + a.config + " is not valid JSON: " + e.what());
    }
    const auto spec = parse_synth_spec(doc);
    datapipe::synth_generate(spec, a.out, a.seed);
    write_manifest(a.out, "synth", a.config, doc, {{"seed", a.seed}});
    return kExitOk;
  });
}

int cmd_profile(const ProfileArgs& a) {
  return guarded([&] {
    const auto run = orchestrate::load_checkpoint(a.checkpoint);
    const TensorF image = datapipe::preprocess_image(a.image, run.cfg.data.image_size);
    const auto prof = recon::generate_loss_profile(image, run.ae, fs::path(a.image).stem().string(), 0);
    const auto fused = imagefeat::build_fused_map(image, prof.map, run.cfg.fusion, run.cfg.blur_sigma);
    const TensorF mask = orchestrate::predict_image(run, image);

    const fs::path out(a.out);
    fs::create_directories(out);
    datapipe::write_map_png(out / "profile.png", imagefeat::normalize_map(prof.map));
    datapipe::write_map_png(out / "fused.png", fused.values);
    datapipe::write_map_png(out / "mask.png", mask);
    return kExitOk;
  });
}

int run(int argc, char** argv) {
  g_command_line.clear();
  for (int i = 0; i < argc; ++i) g_command_line += (i ? " " : "") + std::string(argv[i]);

  CLI::App app{"lpad: sampler-driven anomaly segmentation from loss profiles"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "pretrain, warm up and jointly train; writes a checkpoint");
  train->add_option("--config", ta.config, "JSON config file")->required();
  train->add_option("--out", ta.out, "output directory")->required();
  train->add_option("--seed", ta.seed, "master seed override");
  train->add_flag("--per-image", ta.per_image, "average AUC per image at evaluation");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "score the test split with a checkpoint");
  eval->add_option("--checkpoint", ea.checkpoint, "checkpoint file")->required();
  eval->add_option("--out", ea.out, "output directory")->required();
  eval->add_option("--data", ea.data, "dataset root (default: from the checkpoint)");
  eval->add_option("--heldout", ea.heldout, "share of images used to pick the F1 threshold")->check(
      CLI::Range(0.0, 1.0));
  eval->add_flag("--per-image", ea.per_image, "average AUC per image");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--config", sa.config, "JSON generator spec")->required();
  synth->add_option("--out", sa.out, "dataset root")->required();
  synth->add_option("--seed", sa.seed, "generator seed");

  ProfileArgs pa;
  auto* profile = app.add_subcommand("profile", "write profile, fused map and predicted mask of one image");
  profile->add_option("--checkpoint", pa.checkpoint, "checkpoint file")->required();
  profile->add_option("--image", pa.image, "input image")->required();
  profile->add_option("--out", pa.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  if (train->parsed()) return cmd_train(ta);
  if (eval->parsed()) return cmd_eval(ea);
  if (synth->parsed()) return cmd_synth(sa);
  return cmd_profile(pa);
}

}  // namespace lpad::cli
