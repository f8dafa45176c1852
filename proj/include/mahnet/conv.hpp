#pragma once

// 2D convolutions over NHWC tensors: standard, transpose (learned
// upsampling) and depthwise modes, with zero 'same' padding.

#include <type_traits>

#include "mahnet/ops.hpp"

namespace mahnet {

enum class ConvMode { kStandard, kTranspose, kDepthwise };
enum class Padding { kSame, kValid };

namespace detail {

struct ConvGeom {
  int n, h, w, cin, kh, kw, cout, oh, ow, pad_t, pad_l, stride;
};

// 'same' with stride s targets out = ceil(in / s); pad_total = k - s when
// k >= s (our kernels are 1 or 3 with stride 1 or 2), split floor/ceil.
inline int same_pad_before(int k, int s) { return std::max(k - s, 0) / 2; }

}  // namespace detail

// x: [N,H,W,Cin]
// w: standard/transpose [kh,kw,Cin,Cout]; depthwise [kh,kw,Cin,1] (Cout == Cin);
//    transpose maps Cin -> Cout while multiplying spatial dims by stride.
template <class T>
Tensor<T> convolve2d(const Tensor<T>& x, const Tensor<T>& w, const std::type_identity_t<Tensor<T>>* bias,
                     int stride, Padding padding, ConvMode mode) {
  if (x.rank() != 4 || w.rank() != 4)
    throw std::invalid_argument("convolve2d: x and w must be rank 4");
  if (stride < 1) throw std::invalid_argument("convolve2d: stride must be >= 1");
  const int n = x.dim(0), h = x.dim(1), wd = x.dim(2), cin = x.dim(3);
  const int kh = w.dim(0), kw = w.dim(1);

  detail::ConvGeom g{};
  g.n = n; g.h = h; g.w = wd; g.cin = cin; g.kh = kh; g.kw = kw; g.stride = stride;

  if (mode == ConvMode::kDepthwise) {
    if (w.dim(2) != cin || w.dim(3) != 1)
      throw std::invalid_argument("convolve2d: depthwise kernel must be [kh,kw,Cin,1]");
    g.cout = cin;
  } else {
    if (w.dim(2) != cin)
      throw std::invalid_argument("convolve2d: kernel Cin mismatch (" +
                                  std::to_string(w.dim(2)) + " vs " + std::to_string(cin) + ")");
    g.cout = w.dim(3);
  }
  if (bias && bias->size() != g.cout)
    throw std::invalid_argument("convolve2d: bias length mismatch");

  if (mode == ConvMode::kTranspose) {
    if (padding != Padding::kSame)
      throw std::invalid_argument("convolve2d: transpose mode supports same padding only");
    g.oh = h * stride;
    g.ow = wd * stride;
    g.pad_t = detail::same_pad_before(kh, stride);
    g.pad_l = detail::same_pad_before(kw, stride);
  } else if (padding == Padding::kSame) {
    g.oh = (h + stride - 1) / stride;
    g.ow = (wd + stride - 1) / stride;
    g.pad_t = detail::same_pad_before(kh, stride);
    g.pad_l = detail::same_pad_before(kw, stride);
  } else {
    g.oh = (h - kh) / stride + 1;
    g.ow = (wd - kw) / stride + 1;
    g.pad_t = g.pad_l = 0;
    if (g.oh < 1 || g.ow < 1) throw std::invalid_argument("convolve2d: kernel larger than input");
  }

  Tensor<T> y({g.n, g.oh, g.ow, g.cout});
  if (bias) {
    for (long p = 0; p < y.size() / g.cout; ++p)
      for (int j = 0; j < g.cout; ++j) y[p * g.cout + j] = (*bias)[j];
  }

  if (mode == ConvMode::kTranspose) {
    // Scatter: adjoint of the strided same conv mapping [s*H] -> [H].
    for (int b = 0; b < g.n; ++b)
      for (int i = 0; i < g.h; ++i)
        for (int j = 0; j < g.w; ++j)
          for (int di = 0; di < g.kh; ++di) {
            int oi = i * g.stride + di - g.pad_t;
            if (oi < 0 || oi >= g.oh) continue;
            for (int dj = 0; dj < g.kw; ++dj) {
              int oj = j * g.stride + dj - g.pad_l;
              if (oj < 0 || oj >= g.ow) continue;
              const T* xr = x.data() + x.index(b, i, j, 0);
              T* yr = y.data() + y.index(b, oi, oj, 0);
              const T* wk = w.data() + ((static_cast<long>(di) * g.kw + dj) * g.cin) * g.cout;
              for (int ci = 0; ci < g.cin; ++ci)
                for (int co = 0; co < g.cout; ++co)
                  yr[co] += xr[ci] * wk[static_cast<long>(ci) * g.cout + co];
            }
          }
  } else if (mode == ConvMode::kDepthwise) {
    for (int b = 0; b < g.n; ++b)
      for (int oi = 0; oi < g.oh; ++oi)
        for (int oj = 0; oj < g.ow; ++oj) {
          T* yr = y.data() + y.index(b, oi, oj, 0);
          for (int di = 0; di < g.kh; ++di) {
            int ii = oi * g.stride + di - g.pad_t;
            if (ii < 0 || ii >= g.h) continue;
            for (int dj = 0; dj < g.kw; ++dj) {
              int jj = oj * g.stride + dj - g.pad_l;
              if (jj < 0 || jj >= g.w) continue;
              const T* xr = x.data() + x.index(b, ii, jj, 0);
              const T* wk = w.data() + (static_cast<long>(di) * g.kw + dj) * g.cin;
              for (int ci = 0; ci < g.cin; ++ci) yr[ci] += xr[ci] * wk[ci];
            }
          }
        }
  } else {
    for (int b = 0; b < g.n; ++b)
      for (int oi = 0; oi < g.oh; ++oi)
        for (int oj = 0; oj < g.ow; ++oj) {
          T* yr = y.data() + y.index(b, oi, oj, 0);
          for (int di = 0; di < g.kh; ++di) {
            int ii = oi * g.stride + di - g.pad_t;
            if (ii < 0 || ii >= g.h) continue;
            for (int dj = 0; dj < g.kw; ++dj) {
              int jj = oj * g.stride + dj - g.pad_l;
              if (jj < 0 || jj >= g.w) continue;
              const T* xr = x.data() + x.index(b, ii, jj, 0);
              const T* wk = w.data() + ((static_cast<long>(di) * g.kw + dj) * g.cin) * g.cout;
              for (int ci = 0; ci < g.cin; ++ci) {
                const T xv = xr[ci];
                const T* wc = wk + static_cast<long>(ci) * g.cout;
                for (int co = 0; co < g.cout; ++co) yr[co] += xv * wc[co];
              }
            }
          }
        }
  }
  y.check_finite("convolve2d");

  bool wants = Tape<T>::active() &&
               (x.requires_grad() || w.requires_grad() || (bias && bias->requires_grad()));
  if (wants) {
    y.set_requires_grad(true);
    Tensor<T> xi = x, wi = w, yo = y;
    Tensor<T> bi = bias ? *bias : Tensor<T>();
    bool has_bias = bias != nullptr;
    Tape<T>::active()->record([xi, wi, bi, yo, g, mode, has_bias]() mutable {
      const auto& gy = yo.grad();
      auto* gyp = gy.data();
      if (mode == ConvMode::kTranspose) {
        // Forward was a scatter; backward gathers along the same index map.
        for (int b = 0; b < g.n; ++b)
          for (int i = 0; i < g.h; ++i)
            for (int j = 0; j < g.w; ++j)
              for (int di = 0; di < g.kh; ++di) {
                int oi = i * g.stride + di - g.pad_t;
                if (oi < 0 || oi >= g.oh) continue;
                for (int dj = 0; dj < g.kw; ++dj) {
                  int oj = j * g.stride + dj - g.pad_l;
                  if (oj < 0 || oj >= g.ow) continue;
                  const T* gyr = gyp + yo.index(b, oi, oj, 0);
                  long wbase = ((static_cast<long>(di) * g.kw + dj) * g.cin) * g.cout;
                  for (int ci = 0; ci < g.cin; ++ci) {
                    if (xi.requires_grad()) {
                      T s = T(0);
                      for (int co = 0; co < g.cout; ++co)
                        s += gyr[co] * wi[wbase + static_cast<long>(ci) * g.cout + co];
                      xi.grad()[xi.index(b, i, j, ci)] += s;
                    }
                    if (wi.requires_grad()) {
                      const T xv = xi[xi.index(b, i, j, ci)];
                      for (int co = 0; co < g.cout; ++co)
                        wi.grad()[wbase + static_cast<long>(ci) * g.cout + co] += xv * gyr[co];
                    }
                  }
                }
              }
      } else {
        for (int b = 0; b < g.n; ++b)
          for (int oi = 0; oi < g.oh; ++oi)
            for (int oj = 0; oj < g.ow; ++oj) {
              const T* gyr = gyp + yo.index(b, oi, oj, 0);
              for (int di = 0; di < g.kh; ++di) {
                int ii = oi * g.stride + di - g.pad_t;
                if (ii < 0 || ii >= g.h) continue;
                for (int dj = 0; dj < g.kw; ++dj) {
                  int jj = oj * g.stride + dj - g.pad_l;
                  if (jj < 0 || jj >= g.w) continue;
                  if (mode == ConvMode::kDepthwise) {
                    long wbase = (static_cast<long>(di) * g.kw + dj) * g.cin;
                    for (int ci = 0; ci < g.cin; ++ci) {
                      if (xi.requires_grad())
                        xi.grad()[xi.index(b, ii, jj, ci)] += gyr[ci] * wi[wbase + ci];
                      if (wi.requires_grad())
                        wi.grad()[wbase + ci] += gyr[ci] * xi[xi.index(b, ii, jj, ci)];
                    }
                  } else {
                    long wbase = ((static_cast<long>(di) * g.kw + dj) * g.cin) * g.cout;
                    for (int ci = 0; ci < g.cin; ++ci) {
                      const long xidx = xi.index(b, ii, jj, ci);
                      if (xi.requires_grad()) {
                        T s = T(0);
                        for (int co = 0; co < g.cout; ++co)
                          s += gyr[co] * wi[wbase + static_cast<long>(ci) * g.cout + co];
                        xi.grad()[xidx] += s;
                      }
                      if (wi.requires_grad()) {
                        const T xv = xi[xidx];
                        for (int co = 0; co < g.cout; ++co)
                          wi.grad()[wbase + static_cast<long>(ci) * g.cout + co] += xv * gyr[co];
                      }
                    }
                  }
                }
              }
            }
      }
      if (has_bias && bi.requires_grad()) {
        auto& gb = bi.grad();
        const long pix = yo.size() / g.cout;
        for (long p = 0; p < pix; ++p)
          for (int j = 0; j < g.cout; ++j) gb[j] += gy[p * g.cout + j];
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> conv_same(const Tensor<T>& x, const Tensor<T>& w, const std::type_identity_t<Tensor<T>>* bias = nullptr,
                    int stride = 1) {
  return convolve2d(x, w, bias, stride, Padding::kSame, ConvMode::kStandard);
}

template <class T>
Tensor<T> conv_transpose(const Tensor<T>& x, const Tensor<T>& w, const std::type_identity_t<Tensor<T>>* bias = nullptr,
                         int stride = 2) {
  return convolve2d(x, w, bias, stride, Padding::kSame, ConvMode::kTranspose);
}

template <class T>
Tensor<T> conv_depthwise(const Tensor<T>& x, const Tensor<T>& w, const std::type_identity_t<Tensor<T>>* bias = nullptr,
                         int stride = 1) {
  return convolve2d(x, w, bias, stride, Padding::kSame, ConvMode::kDepthwise);
}

}  // namespace mahnet
