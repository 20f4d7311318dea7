#include "lpad/container.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

namespace lpad::datapipe {
namespace {

constexpr char kMagic[4] = {'L', 'P', 'R', 'F'};

const char* dtype_name(DType d) {
  switch (d) {
    case DType::kF32: return "f32";
    case DType::kF64: return "f64";
    case DType::kU32: return "u32";
    case DType::kI64: return "i64";
  }
  return "?";
}

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::kF32;
  if (s == "f64") return DType::kF64;
  if (s == "u32") return DType::kU32;
  if (s == "i64") return DType::kI64;
  throw PersistenceError("unknown array dtype \"" + s + "\"");
}

std::size_t dtype_size(DType d) { return d == DType::kF32 || d == DType::kU32 ? 4 : 8; }

std::uint64_t element_count(const std::vector<std::int64_t>& shape) {
  std::uint64_t n = 1;
  for (auto e : shape) {
    if (e < 0) throw PersistenceError("negative extent in array shape");
    n *= static_cast<std::uint64_t>(e);
  }
  return n;
}

template <typename V>
std::vector<std::uint8_t> raw_bytes(const V* data, std::size_t n) {
  std::vector<std::uint8_t> out(n * sizeof(V));
  if (n > 0) std::memcpy(out.data(), data, out.size());
  return out;
}

template <typename V>
std::vector<V> from_bytes(const std::vector<std::uint8_t>& b) {
  std::vector<V> out(b.size() / sizeof(V));
  if (!out.empty()) std::memcpy(out.data(), b.data(), b.size());
  return out;
}

Shape tensor_shape(const ArrayEntry& e) {
  Shape s(e.shape.begin(), e.shape.end());
  return s;
}

}  // namespace

void Container::add(ArrayEntry e) {
  if (has(e.name)) throw InternalError("container already holds an array named " + e.name);
  arrays_.push_back(std::move(e));
}

void Container::put(const std::string& name, const TensorF& t) {
  add({name, DType::kF32, {t.shape().begin(), t.shape().end()}, raw_bytes(t.data(), t.size())});
}

void Container::put(const std::string& name, const TensorD& t) {
  add({name, DType::kF64, {t.shape().begin(), t.shape().end()}, raw_bytes(t.data(), t.size())});
}

void Container::put_u32(const std::string& name, std::vector<std::int64_t> shape, const std::vector<std::uint32_t>& v) {
  if (element_count(shape) != v.size()) throw InternalError("u32 array " + name + " does not match its shape");
  add({name, DType::kU32, std::move(shape), raw_bytes(v.data(), v.size())});
}

void Container::put_i64(const std::string& name, const std::vector<std::int64_t>& v) {
  add({name, DType::kI64, {static_cast<std::int64_t>(v.size())}, raw_bytes(v.data(), v.size())});
}

bool Container::has(const std::string& name) const {
  for (const auto& a : arrays_) {
    if (a.name == name) return true;
  }
  return false;
}

const ArrayEntry& Container::get(const std::string& name, DType dtype) const {
  for (const auto& a : arrays_) {
    if (a.name != name) continue;
    if (a.dtype != dtype) {
      throw PersistenceError("array " + name + " has dtype " + dtype_name(a.dtype) + ", expected " + dtype_name(dtype));
    }
    return a;
  }
  throw PersistenceError("container has no array named " + name);
}

TensorF Container::f32(const std::string& name) const {
  const auto& a = get(name, DType::kF32);
  return TensorF(tensor_shape(a), from_bytes<float>(a.bytes));
}

TensorD Container::f64(const std::string& name) const {
  const auto& a = get(name, DType::kF64);
  return TensorD(tensor_shape(a), from_bytes<double>(a.bytes));
}

std::vector<std::uint32_t> Container::u32(const std::string& name) const {
  return from_bytes<std::uint32_t>(get(name, DType::kU32).bytes);
}

std::vector<std::int64_t> Container::i64(const std::string& name) const {
  return from_bytes<std::int64_t>(get(name, DType::kI64).bytes);
}

std::vector<std::uint8_t> Container::serialize() const {
  nlohmann::ordered_json header;
  header["arrays"] = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& a : arrays_) {
    const std::uint64_t count = element_count(a.shape);
    header["arrays"].push_back({{"name", a.name},
                                {"dtype", dtype_name(a.dtype)},
                                {"shape", a.shape},
                                {"offset", offset},
                                {"count", count}});
    offset += a.bytes.size();
  }
  header["meta"] = meta;
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  const std::uint16_t version = kContainerVersion;
  const auto len = static_cast<std::uint32_t>(text.size());
  out.insert(out.end(), reinterpret_cast<const std::uint8_t*>(&version),
             reinterpret_cast<const std::uint8_t*>(&version) + 2);
  out.insert(out.end(), reinterpret_cast<const std::uint8_t*>(&len), reinterpret_cast<const std::uint8_t*>(&len) + 4);
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& a : arrays_) out.insert(out.end(), a.bytes.begin(), a.bytes.end());
  return out;
}

Container Container::deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 10 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw PersistenceError("not an LPRF container (bad magic)");
  }
  std::uint16_t version;
  std::uint32_t len;
  std::memcpy(&version, bytes.data() + 4, 2);
  std::memcpy(&len, bytes.data() + 6, 4);
  if (version != kContainerVersion) {
    throw PersistenceError("unsupported container version " + std::to_string(version) + " (this build reads version " +
                           std::to_string(kContainerVersion) + ")");
  }
  if (bytes.size() - 10 < len) throw PersistenceError("container header is truncated");
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(bytes.begin() + 10, bytes.begin() + 10 + len);
  } catch (const nlohmann::json::exception& e) {
    throw PersistenceError(std::string("container header is not valid JSON: ") + e.what());
  }
  const std::size_t payload_start = 10 + static_cast<std::size_t>(len);
  const std::size_t payload = bytes.size() - payload_start;
  Container c;
  try {
    if (!header.contains("arrays") || !header["arrays"].is_array()) {
      throw PersistenceError("container header has no array list");
    }
    std::uint64_t expected_offset = 0;
    for (const auto& a : header["arrays"]) {
      ArrayEntry e;
      e.name = a.at("name").get<std::string>();
      e.dtype = parse_dtype(a.at("dtype").get<std::string>());
      e.shape = a.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = a.at("offset").get<std::uint64_t>();
      const auto count = a.at("count").get<std::uint64_t>();
      if (count != element_count(e.shape)) {
        throw PersistenceError("array " + e.name + ": header count " + std::to_string(count) +
                               " disagrees with its shape");
      }
      if (offset != expected_offset) throw PersistenceError("array " + e.name + ": unexpected payload offset");
      const std::uint64_t nbytes = count * dtype_size(e.dtype);
      if (offset + nbytes > payload) {
        throw PersistenceError("array " + e.name + ": payload is truncated (" + std::to_string(payload) +
                               " bytes available)");
      }
      e.bytes.assign(bytes.begin() + payload_start + offset, bytes.begin() + payload_start + offset + nbytes);
      expected_offset += nbytes;
      c.add(std::move(e));
    }
    if (expected_offset != payload) {
      throw PersistenceError("container payload has " + std::to_string(payload) + " bytes, header declares " +
                             std::to_string(expected_offset));
    }
    if (header.contains("meta")) c.meta = header["meta"];
  } catch (const nlohmann::json::exception& e) {
    throw PersistenceError(std::string("malformed container header: ") + e.what());
  } catch (const InternalError& e) {
    throw PersistenceError(std::string("malformed container header: ") + e.what());
  }
  return c;
}

void save_container(const std::filesystem::path& path, const Container& c) {
  const auto bytes = c.serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PersistenceError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw PersistenceError("failed writing " + path.string());
}

Container load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PersistenceError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return Container::deserialize(bytes);
}

void save_array(const std::filesystem::path& path, const TensorF& t, const std::string& name) {
  Container c;
  c.put(name, t);
  save_container(path, c);
}

TensorF load_array(const std::filesystem::path& path) {
  const Container c = load_container(path);
  if (c.arrays().size() != 1) throw PersistenceError(path.string() + " does not hold exactly one array");
  return c.f32(c.arrays().front().name);
}

}  // namespace lpad::datapipe
