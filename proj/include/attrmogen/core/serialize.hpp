#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "attrmogen/core/errors.hpp"
#include "attrmogen/core/tensor.hpp"

namespace attrmogen {

using Json = nlohmann::json;

// All binary containers are float32 little-endian. The build targets
// little-endian hosts; the asserts below keep that honest.
static_assert(sizeof(float) == 4);

inline void write_f32(std::ostream& os, const double* src, int64_t n) {
  std::vector<float> buf(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) buf[static_cast<size_t>(i)] = static_cast<float>(src[i]);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(sizeof(float) * buf.size()));
}

inline void read_f32(std::istream& is, double* dst, int64_t n) {
  std::vector<float> buf(static_cast<size_t>(n));
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(sizeof(float) * buf.size()));
  require(is.good() || is.eof(), ErrorClass::io, "float32 read failed");
  require(is.gcount() == static_cast<std::streamsize>(sizeof(float) * buf.size()),
          ErrorClass::io, "truncated float32 data");
  for (int64_t i = 0; i < n; ++i) dst[i] = static_cast<double>(buf[static_cast<size_t>(i)]);
}

inline void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  require(is.gcount() == 4, ErrorClass::io, "truncated u32");
  return v;
}

// Named-tensor blob: magic, version, count, then per tensor
// (name, ndim, dims..., float32 payload). Bit-exact on round trip.
struct NamedTensors {
  std::vector<std::pair<std::string, Tensor>> items;

  static constexpr uint32_t kMagic = 0x414d4754;  // "AMGT"
  static constexpr uint32_t kVersion = 1;

  void add(const std::string& name, const Tensor& t) { items.emplace_back(name, t); }

  const Tensor& get(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return t;
    fail(ErrorClass::io, "tensor not found in blob: " + name);
  }

  bool has(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return true;
    return false;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), ErrorClass::io, "cannot open for write: " + path.string());
    write_u32(os, kMagic);
    write_u32(os, kVersion);
    write_u32(os, static_cast<uint32_t>(items.size()));
    for (const auto& [name, t] : items) {
      write_u32(os, static_cast<uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_u32(os, static_cast<uint32_t>(t.ndim()));
      for (size_t d = 0; d < t.ndim(); ++d)
        write_u32(os, static_cast<uint32_t>(t.dim(d)));
      write_f32(os, t.data(), t.numel());
    }
    require(os.good(), ErrorClass::io, "write failed: " + path.string());
  }

  static NamedTensors load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), ErrorClass::io, "cannot open for read: " + path.string());
    require(read_u32(is) == kMagic, ErrorClass::io, "bad tensor blob magic");
    const uint32_t version = read_u32(is);
    require(version == kVersion, ErrorClass::io,
            "unsupported tensor blob version " + std::to_string(version));
    const uint32_t count = read_u32(is);
    NamedTensors out;
    for (uint32_t i = 0; i < count; ++i) {
      const uint32_t name_len = read_u32(is);
      std::string name(name_len, '\0');
      is.read(name.data(), name_len);
      require(is.gcount() == static_cast<std::streamsize>(name_len), ErrorClass::io,
              "truncated tensor name");
      const uint32_t ndim = read_u32(is);
      std::vector<int64_t> shape(ndim);
      for (uint32_t d = 0; d < ndim; ++d) shape[d] = read_u32(is);
      Tensor t(shape);
      read_f32(is, t.data(), t.numel());
      out.items.emplace_back(std::move(name), std::move(t));
    }
    return out;
  }
};

inline void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream os(path);
  require(os.good(), ErrorClass::io, "cannot open for write: " + path.string());
  os << j.dump(2) << "\n";
  require(os.good(), ErrorClass::io, "write failed: " + path.string());
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(is.good(), ErrorClass::io, "cannot open for read: " + path.string());
  Json j;
  try {
    is >> j;
  } catch (const Json::parse_error& e) {
    fail(ErrorClass::io, "bad json in " + path.string() + ": " + e.what());
  }
  return j;
}

// FNV-1a over a string; used for config hashes embedded in artifact names.
inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hash_hex(const std::string& s) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(s)));
  return std::string(buf);
}

inline std::string config_hash(const Json& j) { return hash_hex(j.dump()); }

}  // namespace attrmogen
