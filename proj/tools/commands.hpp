#pragma once

#include <optional>
#include <string>
#include <vector>

namespace lpad::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitInternal = 4;

struct TrainArgs {
  std::string config;
  std::string out;
  std::optional<unsigned long long> seed;
  bool per_image = false;
};

struct EvalArgs {
  std::string checkpoint;
  std::string out;
  std::string data;  // empty: dataset root from the checkpoint's config
  std::optional<double> heldout;
  bool per_image = false;
};

struct SynthArgs {
  std::string config;
  std::string out;
  unsigned long long seed = 1;
};

struct ProfileArgs {
  std::string checkpoint;
  std::string image;
  std::string out;
};

int cmd_train(const TrainArgs& a);
int cmd_eval(const EvalArgs& a);
int cmd_synth(const SynthArgs& a);
int cmd_profile(const ProfileArgs& a);

/// Parses argv and dispatches; returns the process exit status.
int run(int argc, char** argv);

}  // namespace lpad::cli
