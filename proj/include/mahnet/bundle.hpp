#pragma once

// ULSB dataset bundle: slice records grouped by patient, serialized with
// a CRC32C trailer. Also filename pairing and a synthetic-lesion
// generator for desk-scale experiments.

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "mahnet/image.hpp"
#include "mahnet/metrics.hpp"

namespace mahnet {

// CRC32C (Castagnoli), reflected polynomial 0x82F63B78.
inline uint32_t crc32c(const uint8_t* data, size_t n, uint32_t crc = 0) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0x82F63B78u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return ~crc;
}

struct SliceRecord {
  Image8 image;
  Mask2D label;
  std::string case_id;
  std::string patient_id;
  uint32_t slice_index = 0;

  void validate() const {
    if (image.h != label.h || image.w != label.w)
      throw std::invalid_argument("slice record: image/label shape mismatch");
    label.validate();
  }
  bool operator==(const SliceRecord& o) const {
    return image.h == o.image.h && image.w == o.image.w && image.v == o.image.v &&
           label.v == o.label.v && case_id == o.case_id && patient_id == o.patient_id &&
           slice_index == o.slice_index;
  }
};

struct PatientRange {
  std::string patient_id;
  uint64_t start = 0;
  uint64_t count = 0;
};

constexpr uint32_t kBundleVersion = 1;

struct DatasetBundle {
  std::vector<SliceRecord> records;  // grouped contiguously by patient
  std::vector<PatientRange> index;
  uint32_t version = kBundleVersion;
};

namespace detail {

template <typename T>
void put_le(std::vector<uint8_t>& out, T v) {
  for (size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_le(const std::vector<uint8_t>& b, size_t& pos) {
  if (pos + sizeof(T) > b.size()) throw std::runtime_error("bundle: truncated data");
  T v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[pos + i]) << (8 * i);
  pos += sizeof(T);
  return v;
}

inline void put_str(std::vector<uint8_t>& out, const std::string& s) {
  put_le<uint32_t>(out, static_cast<uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

inline std::string get_str(const std::vector<uint8_t>& b, size_t& pos) {
  uint32_t n = get_le<uint32_t>(b, pos);
  if (pos + n > b.size()) throw std::runtime_error("bundle: truncated string");
  std::string s(b.begin() + static_cast<long>(pos), b.begin() + static_cast<long>(pos + n));
  pos += n;
  return s;
}

}  // namespace detail

// Builds the patient index by grouping records; reorders them so each
// patient's records are contiguous (stable in first-seen patient order).
inline DatasetBundle make_bundle(std::vector<SliceRecord> records) {
  if (records.empty()) throw std::invalid_argument("make_bundle: no records");
  for (const auto& r : records) r.validate();
  std::vector<std::string> order;
  std::map<std::string, std::vector<SliceRecord>> groups;
  for (auto& r : records) {
    if (!groups.count(r.patient_id)) order.push_back(r.patient_id);
    groups[r.patient_id].push_back(std::move(r));
  }
  DatasetBundle b;
  for (const auto& pid : order) {
    PatientRange pr{pid, b.records.size(), groups[pid].size()};
    for (auto& r : groups[pid]) b.records.push_back(std::move(r));
    b.index.push_back(pr);
  }
  return b;
}

inline std::vector<uint8_t> serialize_bundle(const DatasetBundle& b) {
  if (b.records.empty()) throw std::invalid_argument("serialize_bundle: no records");
  std::vector<uint8_t> out = {'U', 'L', 'S', 'B'};
  detail::put_le<uint32_t>(out, b.version);
  detail::put_le<uint64_t>(out, b.records.size());
  for (const auto& r : b.records) {
    r.validate();
    detail::put_str(out, r.case_id);
    detail::put_str(out, r.patient_id);
    detail::put_le<uint32_t>(out, r.slice_index);
    detail::put_le<uint32_t>(out, static_cast<uint32_t>(r.image.h));
    detail::put_le<uint32_t>(out, static_cast<uint32_t>(r.image.w));
    out.insert(out.end(), r.image.v.begin(), r.image.v.end());
    size_t npix = r.label.v.size();
    std::vector<uint8_t> packed((npix + 7) / 8, 0);
    for (size_t i = 0; i < npix; ++i)
      if (r.label.v[i]) packed[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
    out.insert(out.end(), packed.begin(), packed.end());
  }
  detail::put_le<uint64_t>(out, b.index.size());
  for (const auto& pr : b.index) {
    detail::put_str(out, pr.patient_id);
    detail::put_le<uint64_t>(out, pr.start);
    detail::put_le<uint64_t>(out, pr.count);
  }
  detail::put_le<uint32_t>(out, crc32c(out.data(), out.size()));
  return out;
}

inline DatasetBundle deserialize_bundle(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 20 || bytes[0] != 'U' || bytes[1] != 'L' || bytes[2] != 'S' ||
      bytes[3] != 'B')
    throw std::runtime_error("bundle: bad magic");
  uint32_t stored_crc = 0;
  {
    size_t p = bytes.size() - 4;
    stored_crc = detail::get_le<uint32_t>(bytes, p);
  }
  if (crc32c(bytes.data(), bytes.size() - 4) != stored_crc)
    throw std::runtime_error("bundle: checksum mismatch");

  size_t pos = 4;
  DatasetBundle b;
  b.version = detail::get_le<uint32_t>(bytes, pos);
  if (b.version != kBundleVersion)
    throw std::runtime_error("bundle: unsupported version " + std::to_string(b.version));
  uint64_t count = detail::get_le<uint64_t>(bytes, pos);
  b.records.resize(count);
  for (auto& r : b.records) {
    r.case_id = detail::get_str(bytes, pos);
    r.patient_id = detail::get_str(bytes, pos);
    r.slice_index = detail::get_le<uint32_t>(bytes, pos);
    uint32_t h = detail::get_le<uint32_t>(bytes, pos);
    uint32_t w = detail::get_le<uint32_t>(bytes, pos);
    size_t npix = static_cast<size_t>(h) * w;
    if (pos + npix + (npix + 7) / 8 > bytes.size())
      throw std::runtime_error("bundle: truncated record");
    r.image = Image8(static_cast<int>(h), static_cast<int>(w));
    std::copy(bytes.begin() + static_cast<long>(pos),
              bytes.begin() + static_cast<long>(pos + npix), r.image.v.begin());
    pos += npix;
    r.label = Mask2D(static_cast<int>(h), static_cast<int>(w));
    for (size_t i = 0; i < npix; ++i)
      r.label.v[i] = (bytes[pos + i / 8] >> (i % 8)) & 1;
    pos += (npix + 7) / 8;
  }
  uint64_t npat = detail::get_le<uint64_t>(bytes, pos);
  b.index.resize(npat);
  std::vector<bool> covered(b.records.size(), false);
  for (auto& pr : b.index) {
    pr.patient_id = detail::get_str(bytes, pos);
    pr.start = detail::get_le<uint64_t>(bytes, pos);
    pr.count = detail::get_le<uint64_t>(bytes, pos);
    if (pr.start + pr.count > b.records.size())
      throw std::runtime_error("bundle: index range out of bounds");
    for (uint64_t i = pr.start; i < pr.start + pr.count; ++i) {
      if (covered[i]) throw std::runtime_error("bundle: overlapping index ranges");
      covered[i] = true;
    }
  }
  for (bool c : covered)
    if (!c) throw std::runtime_error("bundle: record not covered by index");
  return b;
}

inline void write_bundle(const DatasetBundle& b, const std::string& path) {
  auto bytes = serialize_bundle(b);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("bundle: cannot write " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
}

inline DatasetBundle read_bundle(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("bundle: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                             std::istreambuf_iterator<char>());
  return deserialize_bundle(bytes);
}

// ---- filename pairing ----

struct PairingResult {
  std::vector<std::pair<std::string, std::string>> pairs;  // (image path, label path)
  std::vector<std::string> unmatched_images;
  std::vector<std::string> unmatched_labels;
};

// Identifier = first capture group of `pattern` applied to the basename.
// Default: the maximal leading run before the first '_'.
inline PairingResult pair_by_identifier(const std::vector<std::string>& image_paths,
                                        const std::vector<std::string>& label_paths,
                                        const std::string& pattern = "^([^_]+)_") {
  std::regex re(pattern);
  auto ident = [&](const std::string& path) -> std::string {
    size_t slash = path.find_last_of('/');
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    std::smatch m;
    if (!std::regex_search(base, m, re) || m.size() < 2)
      throw std::runtime_error("pair_by_identifier: no identifier in " + base);
    return m[1].str();
  };
  auto collect = [&](const std::vector<std::string>& paths, const char* side) {
    std::map<std::string, std::string> byid;
    for (const auto& p : paths) {
      std::string id = ident(p);
      if (byid.count(id))
        throw std::runtime_error(std::string("pair_by_identifier: duplicate ") + side +
                                 " identifier " + id);
      byid[id] = p;
    }
    return byid;
  };
  auto imgs = collect(image_paths, "image");
  auto lbls = collect(label_paths, "label");

  PairingResult r;
  for (const auto& [id, ipath] : imgs) {
    auto it = lbls.find(id);
    if (it != lbls.end()) r.pairs.push_back({ipath, it->second});
    else r.unmatched_images.push_back(ipath);
  }
  for (const auto& [id, lpath] : lbls)
    if (!imgs.count(id)) r.unmatched_labels.push_back(lpath);
  return r;
}

// ---- synthetic lesion generator ----

enum class LesionKind { kDisk, kEllipse, kBlob };

inline LesionKind lesion_kind_from_string(const std::string& s) {
  if (s == "disk") return LesionKind::kDisk;
  if (s == "ellipse") return LesionKind::kEllipse;
  if (s == "blob") return LesionKind::kBlob;
  throw std::invalid_argument("unknown lesion kind: " + s);
}

// Noisy gray background with a single bright lesion per slice; the label
// is the exact lesion support. Lesion area is log-uniform between 4 px
// and 10% of the image. Deterministic per seed.
inline DatasetBundle synth_dataset(uint64_t seed, int n_cases, int size,
                                   LesionKind kind = LesionKind::kDisk,
                                   int background = 60, int contrast = 90) {
  if (size < 16) throw std::invalid_argument("synth_dataset: size must be >= 16");
  if (n_cases < 1) throw std::invalid_argument("synth_dataset: need at least one case");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<SliceRecord> records;
  for (int c = 0; c < n_cases; ++c) {
    SliceRecord rec;
    rec.case_id = "case" + std::to_string(c);
    rec.patient_id = "p" + std::to_string(c / 4);
    rec.slice_index = static_cast<uint32_t>(c % 4);
    rec.image = Image8(size, size);
    rec.label = Mask2D(size, size);

    double area_lo = 4.0, area_hi = 0.10 * size * size;
    double area = std::exp(std::log(area_lo) + unit(rng) * (std::log(area_hi) - std::log(area_lo)));
    double radius = std::sqrt(area / std::numbers::pi);

    double margin = std::max(radius + 1.0, 2.0);
    double cy = margin + unit(rng) * (size - 2 * margin);
    double cx = margin + unit(rng) * (size - 2 * margin);
    double aspect = 1.0, angle = 0.0;
    if (kind == LesionKind::kEllipse) {
      aspect = 1.5 + unit(rng);
      angle = unit(rng) * std::numbers::pi;
    }
    // blob: radius modulated around the boundary by a low-order harmonic
    double blob_amp = kind == LesionKind::kBlob ? 0.3 + 0.2 * unit(rng) : 0.0;
    double blob_phase = unit(rng) * 2.0 * std::numbers::pi;
    int blob_lobes = 3 + static_cast<int>(unit(rng) * 3.0);

    double ca = std::cos(angle), sa = std::sin(angle);
    for (int r = 0; r < size; ++r)
      for (int col = 0; col < size; ++col) {
        double dy = r - cy, dx = col - cx;
        double u = ca * dx + sa * dy;
        double v = -sa * dx + ca * dy;
        double rr;
        if (kind == LesionKind::kEllipse) {
          double ra = radius * std::sqrt(aspect), rb = radius / std::sqrt(aspect);
          rr = std::sqrt((u / ra) * (u / ra) + (v / rb) * (v / rb));
        } else {
          double d = std::sqrt(dx * dx + dy * dy);
          double edge = radius;
          if (kind == LesionKind::kBlob) {
            double th = std::atan2(dy, dx);
            edge = radius * (1.0 + blob_amp * std::sin(blob_lobes * th + blob_phase));
          }
          rr = edge > 0 ? d / edge : 2.0;
        }
        if (rr <= 1.0) rec.label.at(r, col) = 1;
      }
    // guarantee a non-empty label even for tiny sampled areas
    if (rec.label.count() == 0)
      rec.label.at(static_cast<int>(cy), static_cast<int>(cx)) = 1;

    // Lesion pixels sit above the noisiest background pixel by at least
    // `contrast`, so the mean gap is >= contrast for any lesion size.
    constexpr int kNoiseMax = 20;
    std::uniform_int_distribution<int> noise(0, kNoiseMax);
    for (int r = 0; r < size; ++r)
      for (int col = 0; col < size; ++col) {
        int base = rec.label.at(r, col) ? background + kNoiseMax + contrast : background;
        rec.image.at(r, col) = static_cast<uint8_t>(std::clamp(base + noise(rng), 0, 255));
      }
    records.push_back(std::move(rec));
  }
  return make_bundle(std::move(records));
}

}  // namespace mahnet
