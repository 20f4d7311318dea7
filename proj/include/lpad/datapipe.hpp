#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lpad/rng.hpp"
#include "lpad/tensor.hpp"

namespace lpad::datapipe {

namespace fs = std::filesystem;

/// 8-bit interleaved pixels as decoded from disk.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;
};

/// Decodes a PNG to gray or RGB (alpha dropped, palettes expanded). Throws
/// DataError naming the file when it cannot be read.
Image8 read_png(const fs::path& path);
void write_png(const fs::path& path, const Image8& image);

/// [C,H,W] float tensor scaled by 1/255; grayscale is replicated to 3 channels.
TensorF to_tensor(const Image8& image);

/// Bilinear resize of a [C,H,W] tensor with half-pixel centres.
TensorF resize_bilinear(const TensorF& image, int height, int width);

/// Nearest-neighbour resize of a [1,H,W] mask, binarized at 0.5.
TensorF resize_mask(const TensorF& mask, int height, int width);

/// Reads an image file as a [3,size,size] tensor in [0,1].
TensorF preprocess_image(const fs::path& path, int size = 256);

/// Reads a mask file as a binary [1,size,size] tensor.
TensorF preprocess_mask(const fs::path& path, int size = 256);

/// Writes a [1,H,W] map as 8-bit gray: round(clamp(v, 0, 1) * 255).
void write_map_png(const fs::path& path, const TensorF& map);

enum class Split { kTrain, kTest };

struct Entry {
  fs::path image;
  Split split = Split::kTrain;
  std::string group;  // "good" for normal images
  fs::path mask;      // empty for normal images
  bool defective() const { return group != "good"; }
  /// Stable identity, e.g. "test/blob/003".
  std::string id() const;
};

struct DatasetIndex {
  std::string category;
  fs::path root;
  std::vector<Entry> entries;       // sorted by path
  std::vector<std::string> groups;  // defect groups, sorted

  std::size_t count(Split split, bool defective) const;
  std::vector<std::size_t> select(Split split, bool defective) const;
  std::vector<std::size_t> group_members(const std::string& group) const;
};

/// Indexes root/category/{train/good, test/<group>, ground_truth/<group>}.
/// Defective images are matched to <stem>_mask.<ext> by stem. Throws DataError
/// on a missing layout or mask.
DatasetIndex load_dataset(const fs::path& root, const std::string& category);

struct LabeledSubset {
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<std::size_t>> by_group;  // entry indices

  std::vector<std::size_t> all() const;
  bool contains(std::size_t entry) const;
};

/// Picks min(per_group, available) defective images per group, uniformly
/// without replacement.
LabeledSubset select_labeled(const DatasetIndex& index, std::uint64_t seed, int per_group = 5);

struct SynthSpec {
  std::string category = "synthetic";
  int size = 256;
  int train_normal = 40;
  int test_normal = 10;
  int test_defective = 10;                 // per defect group
  std::string texture = "noise";           // noise | grid
  std::vector<std::string> defects{"blob"};  // each entry is one group: blob | scratch
  double intensity_offset = 0.3;
  int min_area = 200;
  int max_area = 800;
  double texture_scale = 3.0;  // blur sigma of the noise texture
};

/// Writes a dataset in the layout load_dataset expects under root/category.
/// Throws ConfigError for unsupported families or an unsatisfiable area range.
void synth_generate(const SynthSpec& spec, const fs::path& root, std::uint64_t seed);

struct SynthSample {
  TensorF image;  // [3,size,size], quantized to 8-bit levels
  TensorF mask;   // [1,size,size]
};

/// One synthetic image; `defect` is empty for a normal sample.
SynthSample synth_sample(const SynthSpec& spec, const std::string& defect, Rng& rng);

}  // namespace lpad::datapipe
