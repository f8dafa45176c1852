#pragma once

// Checkpoint container: magic "MAHW", version u32, u64 tensor count, then
// per tensor (u32 name length + UTF-8 name, dtype u8, rank u8,
// u64 extents, raw little-endian values). Round-trips are bit-exact.

#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include "mahnet/tensor.hpp"

namespace mahnet {

constexpr uint32_t kCheckpointVersion = 1;
constexpr uint8_t kDtypeF64 = 0;
constexpr uint8_t kDtypeF32 = 1;

namespace detail {

template <class V>
void write_pod(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V read_pod(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace detail

struct NamedTensors {
  std::map<std::string, TensorD> entries;  // ordered by name for determinism
};

inline void save_checkpoint(const NamedTensors& ts, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  os.write("MAHW", 4);
  detail::write_pod(os, kCheckpointVersion);
  detail::write_pod(os, static_cast<uint64_t>(ts.entries.size()));
  for (const auto& [name, t] : ts.entries) {
    detail::write_pod(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod(os, kDtypeF64);
    detail::write_pod(os, static_cast<uint8_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) detail::write_pod(os, static_cast<uint64_t>(t.dim(i)));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "MAHW", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  uint32_t ver = detail::read_pod<uint32_t>(is);
  if (ver != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(ver));
  uint64_t count = detail::read_pod<uint64_t>(is);
  NamedTensors out;
  for (uint64_t k = 0; k < count; ++k) {
    uint32_t nlen = detail::read_pod<uint32_t>(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    uint8_t dtype = detail::read_pod<uint8_t>(is);
    uint8_t rank = detail::read_pod<uint8_t>(is);
    Shape shape(rank);
    for (int i = 0; i < rank; ++i) shape[i] = static_cast<int>(detail::read_pod<uint64_t>(is));
    TensorD t(shape);
    if (dtype == kDtypeF64) {
      is.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
    } else if (dtype == kDtypeF32) {
      std::vector<float> buf(static_cast<size_t>(t.size()));
      is.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
      for (long i = 0; i < t.size(); ++i) t[i] = static_cast<double>(buf[static_cast<size_t>(i)]);
    } else {
      throw std::runtime_error("checkpoint: unknown dtype code");
    }
    if (!is) throw std::runtime_error("checkpoint: truncated tensor payload");
    out.entries.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace mahnet
