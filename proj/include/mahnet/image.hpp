#pragma once

// 8-bit grayscale image utilities: per-slice min-max normalization,
// separable Lanczos-3 resampling and a minimal PNG codec over zlib.

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "mahnet/nifti.hpp"

namespace mahnet {

struct Image8 {
  int h = 0, w = 0;
  std::vector<uint8_t> v;  // row-major

  Image8() = default;
  Image8(int hh, int ww) : h(hh), w(ww), v(static_cast<size_t>(hh) * ww, 0) {}

  uint8_t at(int r, int c) const { return v[static_cast<size_t>(r) * w + c]; }
  uint8_t& at(int r, int c) { return v[static_cast<size_t>(r) * w + c]; }
};

// Per axial slice: min-max to [0,1] (constant slice -> zeros), then
// quantize with round-half-up to 0..255. Slice z is laid out H=ny rows
// by W=nx columns.
inline std::vector<Image8> extract_slices(const VolumeRecord& vol) {
  if (vol.nz < 1) throw std::invalid_argument("extract_slices: empty volume");
  std::vector<Image8> out;
  out.reserve(static_cast<size_t>(vol.nz));
  for (int z = 0; z < vol.nz; ++z) {
    float lo = vol.at(0, 0, z), hi = lo;
    for (int y = 0; y < vol.ny; ++y)
      for (int x = 0; x < vol.nx; ++x) {
        float s = vol.at(x, y, z);
        lo = std::min(lo, s);
        hi = std::max(hi, s);
      }
    Image8 img(vol.ny, vol.nx);
    if (hi > lo) {
      double range = static_cast<double>(hi) - static_cast<double>(lo);
      for (int y = 0; y < vol.ny; ++y)
        for (int x = 0; x < vol.nx; ++x) {
          double t = (static_cast<double>(vol.at(x, y, z)) - lo) / range;
          img.at(y, x) = static_cast<uint8_t>(std::floor(t * 255.0 + 0.5));
        }
    }
    out.push_back(std::move(img));
  }
  return out;
}

namespace detail {

// L(x) = sinc(x) sinc(x/3) for |x| < 3, else 0.
inline double lanczos3(double x) {
  x = std::abs(x);
  if (x >= 3.0) return 0.0;
  if (x < 1e-12) return 1.0;
  double px = std::numbers::pi * x;
  return 3.0 * std::sin(px) * std::sin(px / 3.0) / (px * px);
}

// Resample one axis: for output index o the source center is
// (o + 0.5) * in/out - 0.5; taps within radius 3, renormalized.
inline void resample_axis(int in_n, int out_n, std::vector<std::vector<std::pair<int, double>>>& taps) {
  taps.assign(static_cast<size_t>(out_n), {});
  double scale = static_cast<double>(in_n) / out_n;
  for (int o = 0; o < out_n; ++o) {
    double center = (o + 0.5) * scale - 0.5;
    int first = static_cast<int>(std::ceil(center - 3.0));
    int last = static_cast<int>(std::floor(center + 3.0));
    double sum = 0.0;
    auto& row = taps[static_cast<size_t>(o)];
    for (int i = first; i <= last; ++i) {
      double wgt = lanczos3(static_cast<double>(i) - center);
      if (wgt == 0.0) continue;
      int src = std::clamp(i, 0, in_n - 1);
      row.push_back({src, wgt});
      sum += wgt;
    }
    for (auto& [src, wgt] : row) wgt /= sum;
  }
}

}  // namespace detail

inline Image8 resize_lanczos(const Image8& img, int out_h = 256, int out_w = 256) {
  if (img.h < 1 || img.w < 1) throw std::invalid_argument("resize_lanczos: empty image");
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_lanczos: bad output dims");

  std::vector<std::vector<std::pair<int, double>>> htaps, wtaps;
  detail::resample_axis(img.w, out_w, wtaps);
  detail::resample_axis(img.h, out_h, htaps);

  // horizontal pass, double intermediate
  std::vector<double> mid(static_cast<size_t>(img.h) * out_w);
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < out_w; ++c) {
      double s = 0.0;
      for (auto& [src, wgt] : wtaps[static_cast<size_t>(c)]) s += wgt * img.at(r, src);
      mid[static_cast<size_t>(r) * out_w + c] = s;
    }

  Image8 out(out_h, out_w);
  for (int r = 0; r < out_h; ++r)
    for (int c = 0; c < out_w; ++c) {
      double s = 0.0;
      for (auto& [src, wgt] : htaps[static_cast<size_t>(r)])
        s += wgt * mid[static_cast<size_t>(src) * out_w + c];
      s = std::clamp(s, 0.0, 255.0);
      out.at(r, c) = static_cast<uint8_t>(std::floor(s + 0.5));
    }
  return out;
}

// ---- minimal PNG (8-bit grayscale only) ----

namespace detail {

inline void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

inline uint32_t get_u32_be(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

inline void png_chunk(std::vector<uint8_t>& out, const char type[4],
                      const std::vector<uint8_t>& data) {
  put_u32_be(out, static_cast<uint32_t>(data.size()));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = static_cast<uint32_t>(
      ::crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
  put_u32_be(out, crc);
}

inline std::vector<uint8_t> zlib_deflate(const std::vector<uint8_t>& raw) {
  uLongf cap = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> out(cap);
  if (compress2(out.data(), &cap, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("png: deflate failed");
  out.resize(cap);
  return out;
}

inline std::vector<uint8_t> zlib_inflate(const std::vector<uint8_t>& comp, size_t expect) {
  std::vector<uint8_t> out(expect);
  uLongf got = static_cast<uLongf>(expect);
  if (uncompress(out.data(), &got, comp.data(), static_cast<uLong>(comp.size())) != Z_OK ||
      got != expect)
    throw std::runtime_error("png: inflate failed");
  return out;
}

}  // namespace detail

inline std::vector<uint8_t> encode_png(const Image8& img) {
  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<uint8_t> ihdr;
  detail::put_u32_be(ihdr, static_cast<uint32_t>(img.w));
  detail::put_u32_be(ihdr, static_cast<uint32_t>(img.h));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // grayscale
  ihdr.push_back(0);  // deflate
  ihdr.push_back(0);  // filter method
  ihdr.push_back(0);  // no interlace
  detail::png_chunk(out, "IHDR", ihdr);

  // filter byte 0 (None) before each scanline
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(img.h) * (img.w + 1));
  for (int r = 0; r < img.h; ++r) {
    raw.push_back(0);
    raw.insert(raw.end(), img.v.begin() + static_cast<size_t>(r) * img.w,
               img.v.begin() + static_cast<size_t>(r + 1) * img.w);
  }
  detail::png_chunk(out, "IDAT", detail::zlib_deflate(raw));
  detail::png_chunk(out, "IEND", {});
  return out;
}

inline Image8 decode_png(const std::vector<uint8_t>& bytes) {
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() < 8 || !std::equal(sig, sig + 8, bytes.begin()))
    throw std::runtime_error("png: bad signature");

  int w = 0, h = 0;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  while (pos + 12 <= bytes.size()) {
    uint32_t len = detail::get_u32_be(&bytes[pos]);
    if (pos + 12 + len > bytes.size()) throw std::runtime_error("png: truncated chunk");
    std::string type(reinterpret_cast<const char*>(&bytes[pos + 4]), 4);
    const uint8_t* data = &bytes[pos + 8];
    if (type == "IHDR") {
      if (len != 13) throw std::runtime_error("png: bad IHDR");
      w = static_cast<int>(detail::get_u32_be(data));
      h = static_cast<int>(detail::get_u32_be(data + 4));
      if (data[8] != 8 || data[9] != 0)
        throw std::runtime_error("png: only 8-bit grayscale is supported");
      if (data[12] != 0) throw std::runtime_error("png: interlace not supported");
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (w < 1 || h < 1) throw std::runtime_error("png: missing IHDR");

  size_t stride = static_cast<size_t>(w) + 1;
  std::vector<uint8_t> raw = detail::zlib_inflate(idat, stride * static_cast<size_t>(h));

  Image8 img(h, w);
  std::vector<uint8_t> prev(static_cast<size_t>(w), 0);
  for (int r = 0; r < h; ++r) {
    uint8_t filter = raw[static_cast<size_t>(r) * stride];
    const uint8_t* line = &raw[static_cast<size_t>(r) * stride + 1];
    for (int c = 0; c < w; ++c) {
      int a = c > 0 ? img.at(r, c - 1) : 0;        // left
      int b = prev[static_cast<size_t>(c)];         // up
      int cc = c > 0 ? prev[static_cast<size_t>(c - 1)] : 0;  // up-left
      int x = line[c];
      int val;
      switch (filter) {
        case 0: val = x; break;
        case 1: val = x + a; break;
        case 2: val = x + b; break;
        case 3: val = x + (a + b) / 2; break;
        case 4: {
          int p = a + b - cc;
          int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - cc);
          int pred = (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : cc);
          val = x + pred;
          break;
        }
        default: throw std::runtime_error("png: unknown filter type");
      }
      img.at(r, c) = static_cast<uint8_t>(val & 0xff);
    }
    for (int c = 0; c < w; ++c) prev[static_cast<size_t>(c)] = img.at(r, c);
  }
  return img;
}

inline void write_png(const std::string& path, const Image8& img) {
  auto bytes = encode_png(img);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("png: cannot write " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
}

inline Image8 read_png(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("png: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                             std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

}  // namespace mahnet
