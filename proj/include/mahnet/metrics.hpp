#pragma once

// The six evaluation metrics over 2D binary masks: DSC, IoU, MHD, RAVD,
// ASD and AUC. Distances are Euclidean on pixel centers, unit spacing.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

namespace mahnet {

// Thrown when a metric has no defined value for the given pair (e.g.
// distance metrics on an empty mask). Reported as absent, not as zero.
class UndefinedMetric : public std::runtime_error {
 public:
  explicit UndefinedMetric(const std::string& what) : std::runtime_error(what) {}
};

struct Mask2D {
  int h = 0, w = 0;
  std::vector<uint8_t> v;  // row-major, values in {0,1}

  Mask2D() = default;
  Mask2D(int hh, int ww) : h(hh), w(ww), v(static_cast<size_t>(hh) * ww, 0) {}

  uint8_t at(int r, int c) const { return v[static_cast<size_t>(r) * w + c]; }
  uint8_t& at(int r, int c) { return v[static_cast<size_t>(r) * w + c]; }
  long count() const {
    long n = 0;
    for (uint8_t x : v) n += x ? 1 : 0;
    return n;
  }
  void validate() const {
    for (uint8_t x : v)
      if (x > 1) throw std::invalid_argument("mask values must be 0 or 1");
  }
};

struct MaskPair {
  Mask2D pred;
  Mask2D gt;
  std::optional<std::vector<double>> probs;  // foreground probability per pixel

  void validate() const {
    if (pred.h != gt.h || pred.w != gt.w)
      throw std::invalid_argument("mask pair: shape mismatch");
    pred.validate();
    gt.validate();
    if (probs && static_cast<long>(probs->size()) != static_cast<long>(pred.h) * pred.w)
      throw std::invalid_argument("mask pair: probability map size mismatch");
  }
};

struct Confusion {
  long tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Confusion confusion(const MaskPair& pair) {
  pair.validate();
  Confusion c;
  for (size_t i = 0; i < pair.pred.v.size(); ++i) {
    bool p = pair.pred.v[i], t = pair.gt.v[i];
    if (p && t) ++c.tp;
    else if (p && !t) ++c.fp;
    else if (!p && t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// 2TP / (2TP + FP + FN); both-empty pairs are 1.0 by convention.
inline double dsc(const MaskPair& pair) {
  Confusion c = confusion(pair);
  long denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

// TP / (TP + FP + FN); same empty-mask convention as dsc.
inline double iou(const MaskPair& pair) {
  Confusion c = confusion(pair);
  long denom = c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;
  return static_cast<double>(c.tp) / static_cast<double>(denom);
}

namespace detail {

struct Point {
  int r, c;
};

inline std::vector<Point> mask_points(const Mask2D& m) {
  std::vector<Point> pts;
  for (int r = 0; r < m.h; ++r)
    for (int c = 0; c < m.w; ++c)
      if (m.at(r, c)) pts.push_back({r, c});
  return pts;
}

inline double nearest_dist(const Point& p, const std::vector<Point>& set) {
  double best2 = std::numeric_limits<double>::infinity();
  for (const Point& q : set) {
    double dr = p.r - q.r, dc = p.c - q.c;
    best2 = std::min(best2, dr * dr + dc * dc);
  }
  return std::sqrt(best2);
}

inline double directed_mean_nn(const std::vector<Point>& from, const std::vector<Point>& to) {
  double s = 0;
  for (const Point& p : from) s += nearest_dist(p, to);
  return s / static_cast<double>(from.size());
}

}  // namespace detail

// Symmetric average-Hausdorff form:
//   max( mean_p min_t d, mean_t min_p d ).
inline double mhd(const MaskPair& pair) {
  pair.validate();
  auto p = detail::mask_points(pair.pred);
  auto t = detail::mask_points(pair.gt);
  if (p.empty() || t.empty()) throw UndefinedMetric("mhd: empty mask");
  return std::max(detail::directed_mean_nn(p, t), detail::directed_mean_nn(t, p));
}

// |V_P - V_T| / V_T with V = foreground pixel count.
inline double ravd(const MaskPair& pair) {
  pair.validate();
  long vp = pair.pred.count(), vt = pair.gt.count();
  if (vt == 0) throw UndefinedMetric("ravd: empty ground truth");
  return std::abs(static_cast<double>(vp - vt)) / static_cast<double>(vt);
}

// Boundary pixels: foreground with a background 4-neighbor or on the border.
inline std::vector<std::pair<int, int>> extract_surface(const Mask2D& m) {
  std::vector<std::pair<int, int>> surf;
  for (int r = 0; r < m.h; ++r)
    for (int c = 0; c < m.w; ++c) {
      if (!m.at(r, c)) continue;
      bool boundary = r == 0 || r == m.h - 1 || c == 0 || c == m.w - 1;
      if (!boundary) {
        boundary = !m.at(r - 1, c) || !m.at(r + 1, c) || !m.at(r, c - 1) || !m.at(r, c + 1);
      }
      if (boundary) surf.push_back({r, c});
    }
  return surf;
}

// Directed pred-surface -> gt-surface mean nearest-neighbor distance.
inline double asd(const MaskPair& pair) {
  pair.validate();
  auto sp = extract_surface(pair.pred);
  auto st = extract_surface(pair.gt);
  if (sp.empty() || st.empty()) throw UndefinedMetric("asd: empty surface");
  std::vector<detail::Point> p, t;
  for (auto& [r, c] : sp) p.push_back({r, c});
  for (auto& [r, c] : st) t.push_back({r, c});
  return detail::directed_mean_nn(p, t);
}

// Mann-Whitney rank statistic, ties counted one half; O(n log n).
inline double auc(const std::vector<double>& probs, const Mask2D& gt) {
  if (static_cast<long>(probs.size()) != static_cast<long>(gt.h) * gt.w)
    throw std::invalid_argument("auc: score/label size mismatch");
  long npos = gt.count();
  long nneg = static_cast<long>(probs.size()) - npos;
  if (npos == 0 || nneg == 0) throw UndefinedMetric("auc: single-class ground truth");

  std::vector<size_t> order(probs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return probs[a] < probs[b]; });

  // average ranks over ties, then U = sum(ranks of positives) - npos(npos+1)/2
  double rank_sum_pos = 0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && probs[order[j + 1]] == probs[order[i]]) ++j;
    double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (size_t k = i; k <= j; ++k)
      if (gt.v[order[k]]) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  double u = rank_sum_pos - static_cast<double>(npos) * (npos + 1) / 2.0;
  return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

inline double auc(const MaskPair& pair) {
  pair.validate();
  if (!pair.probs) throw std::invalid_argument("auc: pair has no probability map");
  return auc(*pair.probs, pair.gt);
}

}  // namespace mahnet
