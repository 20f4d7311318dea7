#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpad/tensor.hpp"

// Minimal array container: "LPRF" magic, u16 format version, u32 header
// length, a JSON header describing every array, then the raw little-endian
// payload in header order.
namespace lpad::datapipe {

static_assert(std::endian::native == std::endian::little, "container payloads are written in native byte order");

inline constexpr std::uint16_t kContainerVersion = 1;

enum class DType { kF32, kF64, kU32, kI64 };

struct ArrayEntry {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> bytes;
};

class Container {
 public:
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();

  void put(const std::string& name, const TensorF& t);
  void put(const std::string& name, const TensorD& t);
  void put_u32(const std::string& name, std::vector<std::int64_t> shape, const std::vector<std::uint32_t>& values);
  void put_i64(const std::string& name, const std::vector<std::int64_t>& values);

  bool has(const std::string& name) const;
  TensorF f32(const std::string& name) const;
  TensorD f64(const std::string& name) const;
  std::vector<std::uint32_t> u32(const std::string& name) const;
  std::vector<std::int64_t> i64(const std::string& name) const;

  const std::vector<ArrayEntry>& arrays() const { return arrays_; }

  std::vector<std::uint8_t> serialize() const;
  static Container deserialize(const std::vector<std::uint8_t>& bytes);

 private:
  void add(ArrayEntry e);
  const ArrayEntry& get(const std::string& name, DType dtype) const;

  std::vector<ArrayEntry> arrays_;
};

void save_container(const std::filesystem::path& path, const Container& c);
Container load_container(const std::filesystem::path& path);

/// Single-array convenience wrappers.
void save_array(const std::filesystem::path& path, const TensorF& t, const std::string& name = "array");
TensorF load_array(const std::filesystem::path& path);

}  // namespace lpad::datapipe
