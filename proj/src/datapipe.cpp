#include "lpad/datapipe.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "lpad/imagefeat.hpp"

namespace lpad::datapipe {

Image8 read_png(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DataError("cannot decode image " + path.string() + ": " + img.message);
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.channels = color ? 3 : 1;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DataError("cannot decode image " + path.string() + ": " + msg);
  }
  return out;
}

void write_png(const fs::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw InternalError("write_png supports 1 or 3 channels");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw PersistenceError("cannot write image " + path.string() + ": " + img.message);
  }
}

TensorF to_tensor(const Image8& image) {
  const int h = image.height, w = image.width, c = image.channels;
  TensorF out({3, h, w});
  for (int ch = 0; ch < 3; ++ch) {
    const int src = c == 1 ? 0 : ch;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        out.at(ch, y, x) = image.pixels[(static_cast<std::size_t>(y) * w + x) * c + src] / 255.0f;
      }
  }
  return out;
}

TensorF resize_bilinear(const TensorF& image, int height, int width) {
  if (image.rank() != 3) throw ConfigError("resize expects a [C,H,W] tensor, got " + shape_str(image.shape()));
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == height && w == width) return image;
  const double sy = static_cast<double>(h) / height, sx = static_cast<double>(w) / width;
  TensorF out({c, height, width});
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, h - 1);
    const double ay = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, w - 1);
      const double ax = fx - x0;
      for (int ch = 0; ch < c; ++ch) {
        const double top = (1 - ax) * image.at(ch, y0, x0) + ax * image.at(ch, y0, x1);
        const double bot = (1 - ax) * image.at(ch, y1, x0) + ax * image.at(ch, y1, x1);
        out.at(ch, y, x) = static_cast<float>((1 - ay) * top + ay * bot);
      }
    }
  }
  return out;
}

TensorF resize_mask(const TensorF& mask, int height, int width) {
  if (mask.rank() != 3 || mask.dim(0) != 1) {
    throw ConfigError("mask resize expects a [1,H,W] tensor, got " + shape_str(mask.shape()));
  }
  const int h = mask.dim(1), w = mask.dim(2);
  TensorF out({1, height, width});
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(h - 1, static_cast<int>((y + 0.5) * h / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(w - 1, static_cast<int>((x + 0.5) * w / width));
      out.at(0, y, x) = mask.at(0, sy, sx) >= 0.5f ? 1.0f : 0.0f;
    }
  }
  return out;
}

TensorF preprocess_image(const fs::path& path, int size) { return resize_bilinear(to_tensor(read_png(path)), size, size); }

TensorF preprocess_mask(const fs::path& path, int size) {
  const Image8 img = read_png(path);
  TensorF m({1, img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      m.at(0, y, x) = img.pixels[(static_cast<std::size_t>(y) * img.width + x) * img.channels] / 255.0f;
    }
  return resize_mask(m, size, size);
}

void write_map_png(const fs::path& path, const TensorF& map) {
  if (map.rank() != 3 || map.dim(0) != 1) throw ConfigError("map export expects [1,H,W], got " + shape_str(map.shape()));
  Image8 img{map.dim(2), map.dim(1), 1, {}};
  img.pixels.resize(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(map[i], 0.0f, 1.0f) * 255.0f));
  }
  write_png(path, img);
}

std::string Entry::id() const {
  return std::string(split == Split::kTrain ? "train/" : "test/") + group + "/" + image.stem().string();
}

std::size_t DatasetIndex::count(Split split, bool defective) const { return select(split, defective).size(); }

std::vector<std::size_t> DatasetIndex::select(Split split, bool defective) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].split == split && entries[i].defective() == defective) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> DatasetIndex::group_members(const std::string& group) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].group == group) out.push_back(i);
  }
  return out;
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

DatasetIndex load_dataset(const fs::path& root, const std::string& category) {
  const fs::path base = root / category;
  if (!fs::is_directory(base)) throw DataError("dataset category directory not found: " + base.string());
  const fs::path train_good = base / "train" / "good";
  const fs::path test = base / "test";
  if (!fs::is_directory(train_good) || !fs::is_directory(test)) {
    throw DataError("unknown dataset layout under " + base.string() + ": expected train/good and test/");
  }
  DatasetIndex index;
  index.category = category;
  index.root = root;
  for (const auto& p : list_images(train_good)) index.entries.push_back(Entry{p, Split::kTrain, "good", {}});
  std::vector<fs::path> groups;
  for (const auto& e : fs::directory_iterator(test)) {
    if (e.is_directory()) groups.push_back(e.path());
  }
  std::sort(groups.begin(), groups.end());
  for (const auto& gdir : groups) {
    const std::string group = gdir.filename().string();
    const bool good = group == "good";
    if (!good) index.groups.push_back(group);
    for (const auto& p : list_images(gdir)) {
      Entry entry{p, Split::kTest, group, {}};
      if (!good) {
        const fs::path mask = base / "ground_truth" / group / (p.stem().string() + "_mask" + p.extension().string());
        if (!fs::is_regular_file(mask)) {
          throw DataError("missing mask for defective image " + p.string() + " (expected " + mask.string() + ")");
        }
        entry.mask = mask;
      }
      index.entries.push_back(std::move(entry));
    }
  }
  if (index.entries.empty()) throw DataError("dataset " + base.string() + " contains no images");
  return index;
}

std::vector<std::size_t> LabeledSubset::all() const {
  std::vector<std::size_t> out;
  for (const auto& [group, members] : by_group) out.insert(out.end(), members.begin(), members.end());
  std::sort(out.begin(), out.end());
  return out;
}

bool LabeledSubset::contains(std::size_t entry) const {
  for (const auto& [group, members] : by_group) {
    if (std::find(members.begin(), members.end(), entry) != members.end()) return true;
  }
  return false;
}

LabeledSubset select_labeled(const DatasetIndex& index, std::uint64_t seed, int per_group) {
  LabeledSubset out;
  out.seed = seed;
  Rng rng(seed);
  for (const auto& group : index.groups) {
    std::vector<std::size_t> members = index.group_members(group);
    const std::size_t take = std::min<std::size_t>(members.size(), static_cast<std::size_t>(std::max(per_group, 0)));
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + rng.below(members.size() - i);
      std::swap(members[i], members[j]);
    }
    members.resize(take);
    std::sort(members.begin(), members.end());
    out.by_group[group] = std::move(members);
  }
  return out;
}

namespace {

std::vector<std::uint8_t> blob_mask(int size, int target, Rng& rng) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(size) * size, 0);
  const double aspect = rng.uniform(0.6, 1.6);
  const double ry = std::sqrt(target / (std::numbers::pi * aspect));
  const double rx = ry * aspect;
  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double margin = std::max(rx, ry) + 2.0;
  const double cy = rng.uniform(margin, size - 1 - margin), cx = rng.uniform(margin, size - 1 - margin);
  // Low-order boundary wobble so blobs are not perfect ellipses.
  const double a2 = rng.uniform(0.0, 0.12), p2 = rng.uniform(0.0, 2 * std::numbers::pi);
  const double a3 = rng.uniform(0.0, 0.08), p3 = rng.uniform(0.0, 2 * std::numbers::pi);
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dy = y - cy, dx = x - cx;
      const double u = (ca * dx + sa * dy) / rx, v = (-sa * dx + ca * dy) / ry;
      const double theta = std::atan2(v, u);
      const double r = 1.0 + a2 * std::sin(2 * theta + p2) + a3 * std::sin(3 * theta + p3);
      if (u * u + v * v <= r * r) m[static_cast<std::size_t>(y) * size + x] = 1;
    }
  return m;
}

std::vector<std::uint8_t> scratch_mask(int size, int target, Rng& rng) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(size) * size, 0);
  const double half_width = rng.uniform(1.0, 2.0);
  const double length = target / (2.0 * half_width);
  const double angle = rng.uniform(0.0, 2 * std::numbers::pi);
  const double bend = rng.uniform(-0.3, 0.3);
  const double reach = length / 2 + half_width + 2;
  if (2 * reach >= size) return m;
  const double cy = rng.uniform(reach, size - 1 - reach), cx = rng.uniform(reach, size - 1 - reach);
  // Two segments meeting at the centre with a small bend.
  const double ay = cy - std::sin(angle) * length / 2, ax = cx - std::cos(angle) * length / 2;
  const double by = cy + std::sin(angle + bend) * length / 2, bx = cx + std::cos(angle + bend) * length / 2;
  auto dist = [](double py, double px, double y0, double x0, double y1, double x1) {
    const double vy = y1 - y0, vx = x1 - x0;
    const double t = std::clamp(((py - y0) * vy + (px - x0) * vx) / (vy * vy + vx * vx), 0.0, 1.0);
    return std::hypot(py - (y0 + t * vy), px - (x0 + t * vx));
  };
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      if (std::min(dist(y, x, ay, ax, cy, cx), dist(y, x, cy, cx, by, bx)) <= half_width) {
        m[static_cast<std::size_t>(y) * size + x] = 1;
      }
    }
  return m;
}

TensorF texture(const SynthSpec& spec, Rng& rng) {
  const int n = spec.size;
  TensorF noise({1, n, n});
  for (auto& v : noise.values()) v = static_cast<float>(rng.normal());
  TensorF smooth = imagefeat::gaussian_blur(noise, spec.texture_scale);
  double mean = 0.0, sq = 0.0;
  for (float v : smooth.values()) mean += v;
  mean /= smooth.size();
  for (float v : smooth.values()) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / smooth.size()) + 1e-12;
  const double tint[3] = {0.03, 0.0, -0.03};
  const int period = 16;
  TensorF img({3, n, n});
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double z = (smooth.at(0, y, x) - mean) / sd;
      double base;
      if (spec.texture == "grid") {
        const bool line = (y % period) < 2 || (x % period) < 2;
        base = (line ? 0.55 : 0.3) + 0.03 * z;
      } else {
        base = 0.4 + 0.08 * z;
      }
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(std::clamp(base + tint[c], 0.05, 0.65));
    }
  return img;
}

float quantize(double v) { return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0); }

void check_spec(const SynthSpec& spec) {
  if (spec.size < 16) throw ConfigError("synth.size must be >= 16");
  if (spec.texture != "noise" && spec.texture != "grid") {
    throw ConfigError("synth.texture must be \"noise\" or \"grid\", got \"" + spec.texture + "\"");
  }
  if (spec.defects.empty()) throw ConfigError("synth.defects must name at least one defect family");
  std::set<std::string> seen;
  for (const auto& d : spec.defects) {
    if (!seen.insert(d).second) throw ConfigError("synth.defects lists \"" + d + "\" twice");
    if (d != "blob" && d != "scratch") throw ConfigError("synth.defects entries must be \"blob\" or \"scratch\", got \"" + d + "\"");
  }
  if (spec.min_area < 1 || spec.max_area < spec.min_area) {
    throw ConfigError("synth area range [" + std::to_string(spec.min_area) + ", " + std::to_string(spec.max_area) +
                      "] is unsatisfiable");
  }
  if (spec.max_area > spec.size * spec.size / 4) {
    throw ConfigError("synth.max_area exceeds a quarter of the image area");
  }
  if (!(spec.intensity_offset > 0.0) || spec.intensity_offset > 0.35) {
    throw ConfigError("synth.intensity_offset must be in (0, 0.35]");
  }
  if (spec.train_normal < 1 || spec.test_normal < 0 || spec.test_defective < 1) {
    throw ConfigError("synth image counts must be positive");
  }
  if (!(spec.texture_scale > 0.0)) throw ConfigError("synth.texture_scale must be positive");
}

}  // namespace

SynthSample synth_sample(const SynthSpec& spec, const std::string& defect, Rng& rng) {
  check_spec(spec);
  const int n = spec.size;
  SynthSample s{texture(spec, rng), TensorF({1, n, n})};
  if (!defect.empty()) {
    std::vector<std::uint8_t> m;
    bool ok = false;
    for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
      const int target = rng.between(spec.min_area, spec.max_area);
      m = defect == "blob" ? blob_mask(n, target, rng) : scratch_mask(n, target, rng);
      const long area = std::count(m.begin(), m.end(), std::uint8_t{1});
      ok = area >= spec.min_area && area <= spec.max_area;
    }
    if (!ok) {
      throw ConfigError("could not draw a " + defect + " defect with area in [" + std::to_string(spec.min_area) +
                        ", " + std::to_string(spec.max_area) + "]");
    }
    const std::size_t plane = static_cast<std::size_t>(n) * n;
    for (std::size_t p = 0; p < plane; ++p) {
      if (!m[p]) continue;
      s.mask[p] = 1.0f;
      for (int c = 0; c < 3; ++c) s.image[c * plane + p] += static_cast<float>(spec.intensity_offset);
    }
  }
  for (auto& v : s.image.values()) v = quantize(v);
  return s;
}

namespace {

void write_rgb(const fs::path& path, const TensorF& img) {
  const int h = img.dim(1), w = img.dim(2);
  Image8 out{w, h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        out.pixels[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(img.at(c, y, x) * 255.0f));
      }
  write_png(path, out);
}

std::string numbered(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", i);
  return buf;
}

}  // namespace

void synth_generate(const SynthSpec& spec, const fs::path& root, std::uint64_t seed) {
  check_spec(spec);
  const fs::path base = root / spec.category;
  Rng rng(seed);
  fs::create_directories(base / "train" / "good");
  for (int i = 0; i < spec.train_normal; ++i) {
    write_rgb(base / "train" / "good" / (numbered(i) + ".png"), synth_sample(spec, "", rng).image);
  }
  if (spec.test_normal > 0) fs::create_directories(base / "test" / "good");
  for (int i = 0; i < spec.test_normal; ++i) {
    write_rgb(base / "test" / "good" / (numbered(i) + ".png"), synth_sample(spec, "", rng).image);
  }
  for (const auto& defect : spec.defects) {
    fs::create_directories(base / "test" / defect);
    fs::create_directories(base / "ground_truth" / defect);
    for (int i = 0; i < spec.test_defective; ++i) {
      const SynthSample s = synth_sample(spec, defect, rng);
      write_rgb(base / "test" / defect / (numbered(i) + ".png"), s.image);
      write_map_png(base / "ground_truth" / defect / (numbered(i) + "_mask.png"), s.mask);
    }
  }
}

}  // namespace lpad::datapipe
