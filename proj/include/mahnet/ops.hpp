#pragma once

// Elementwise, normalization, pooling and shape ops over Tensor<T>.
// Every op validates its output for finiteness and records a backward
// closure on the active tape when gradients are requested.

#include <algorithm>
#include <type_traits>
#include <cmath>

#include "mahnet/tensor.hpp"

namespace mahnet {

enum class Activation { kRelu, kSilu, kSigmoid, kSoftplus };

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "silu") return Activation::kSilu;
  if (s == "sigmoid") return Activation::kSigmoid;
  if (s == "softplus") return Activation::kSoftplus;
  throw std::invalid_argument("unknown activation kind: " + s);
}

namespace detail {

template <class T>
inline T sigmoid_val(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
inline T softplus_val(T x) {
  // log(1+e^x), overflow-safe
  if (x > T(30)) return x;
  return std::log1p(std::exp(x));
}

template <class T>
inline bool want_grad2(const Tensor<T>& a, const Tensor<T>& b) {
  return Tape<T>::active() && (a.requires_grad() || b.requires_grad());
}

}  // namespace detail

template <class T>
Tensor<T> apply_activation(Activation kind, const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const long n = x.size();
  switch (kind) {
    case Activation::kRelu:
      for (long i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case Activation::kSilu:
      for (long i = 0; i < n; ++i) y[i] = x[i] * detail::sigmoid_val(x[i]);
      break;
    case Activation::kSigmoid:
      for (long i = 0; i < n; ++i) y[i] = detail::sigmoid_val(x[i]);
      break;
    case Activation::kSoftplus:
      for (long i = 0; i < n; ++i) y[i] = detail::softplus_val(x[i]);
      break;
  }
  y.check_finite("apply_activation");
  if (grad_enabled(x)) {
    y.set_requires_grad(true);
    Tensor<T> xi = x, yo = y;
    Tape<T>::active()->record([kind, xi, yo]() mutable {
      auto& gx = xi.grad();
      const auto& gy = yo.grad();
      for (long i = 0; i < xi.size(); ++i) {
        T d;
        switch (kind) {
          case Activation::kRelu:
            d = xi[i] > T(0) ? T(1) : T(0);
            break;
          case Activation::kSilu: {
            T s = detail::sigmoid_val(xi[i]);
            d = s + xi[i] * s * (T(1) - s);
            break;
          }
          case Activation::kSigmoid: {
            T s = detail::sigmoid_val(xi[i]);
            d = s * (T(1) - s);
            break;
          }
          case Activation::kSoftplus:
            d = detail::sigmoid_val(xi[i]);
            break;
        }
        gx[i] += gy[i] * d;
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) { return apply_activation(Activation::kRelu, x); }
template <class T>
Tensor<T> silu(const Tensor<T>& x) { return apply_activation(Activation::kSilu, x); }
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) { return apply_activation(Activation::kSigmoid, x); }
template <class T>
Tensor<T> softplus(const Tensor<T>& x) { return apply_activation(Activation::kSoftplus, x); }

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  Tensor<T> y(a.shape());
  for (long i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  y.check_finite("add");
  if (detail::want_grad2(a, b)) {
    y.set_requires_grad(true);
    Tensor<T> ai = a, bi = b, yo = y;
    Tape<T>::active()->record([ai, bi, yo]() mutable {
      const auto& gy = yo.grad();
      if (ai.requires_grad()) {
        auto& ga = ai.grad();
        for (long i = 0; i < ai.size(); ++i) ga[i] += gy[i];
      }
      if (bi.requires_grad()) {
        auto& gb = bi.grad();
        for (long i = 0; i < bi.size(); ++i) gb[i] += gy[i];
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mul: shape mismatch");
  Tensor<T> y(a.shape());
  for (long i = 0; i < a.size(); ++i) y[i] = a[i] * b[i];
  y.check_finite("mul");
  if (detail::want_grad2(a, b)) {
    y.set_requires_grad(true);
    Tensor<T> ai = a, bi = b, yo = y;
    Tape<T>::active()->record([ai, bi, yo]() mutable {
      const auto& gy = yo.grad();
      if (ai.requires_grad()) {
        auto& ga = ai.grad();
        for (long i = 0; i < ai.size(); ++i) ga[i] += gy[i] * bi[i];
      }
      if (bi.requires_grad()) {
        auto& gb = bi.grad();
        for (long i = 0; i < bi.size(); ++i) gb[i] += gy[i] * ai[i];
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> y(a.shape());
  for (long i = 0; i < a.size(); ++i) y[i] = a[i] * factor;
  y.check_finite("scale");
  if (grad_enabled(a)) {
    y.set_requires_grad(true);
    Tensor<T> ai = a, yo = y;
    Tape<T>::active()->record([ai, yo, factor]() mutable {
      auto& ga = ai.grad();
      const auto& gy = yo.grad();
      for (long i = 0; i < ai.size(); ++i) ga[i] += gy[i] * factor;
    });
  }
  return y;
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T s = T(0);
  for (long i = 0; i < a.size(); ++i) s += a[i];
  Tensor<T> y = Tensor<T>::scalar(s);
  y.check_finite("sum_all");
  if (grad_enabled(a)) {
    y.set_requires_grad(true);
    Tensor<T> ai = a, yo = y;
    Tape<T>::active()->record([ai, yo]() mutable {
      auto& ga = ai.grad();
      T g = yo.grad()[0];
      for (long i = 0; i < ai.size(); ++i) ga[i] += g;
    });
  }
  return y;
}

// Broadcast a length-C vector additively over the channel (last) axis.
template <class T>
Tensor<T> add_channel(const Tensor<T>& x, const Tensor<T>& bias) {
  const int c = x.shape().back();
  if (bias.size() != c) throw std::invalid_argument("add_channel: bias length mismatch");
  Tensor<T> y(x.shape());
  const long rows = x.size() / c;
  for (long r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) y[r * c + j] = x[r * c + j] + bias[j];
  y.check_finite("add_channel");
  if (detail::want_grad2(x, bias)) {
    y.set_requires_grad(true);
    Tensor<T> xi = x, bi = bias, yo = y;
    Tape<T>::active()->record([xi, bi, yo, rows, c]() mutable {
      const auto& gy = yo.grad();
      if (xi.requires_grad()) {
        auto& gx = xi.grad();
        for (long i = 0; i < xi.size(); ++i) gx[i] += gy[i];
      }
      if (bi.requires_grad()) {
        auto& gb = bi.grad();
        for (long r = 0; r < rows; ++r)
          for (int j = 0; j < c; ++j) gb[j] += gy[r * c + j];
      }
    });
  }
  return y;
}

// Multiply by a length-C vector broadcast over the channel (last) axis.
template <class T>
Tensor<T> mul_channel(const Tensor<T>& x, const Tensor<T>& v) {
  const int c = x.shape().back();
  if (v.size() != c) throw std::invalid_argument("mul_channel: vector length mismatch");
  Tensor<T> y(x.shape());
  const long rows = x.size() / c;
  for (long r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) y[r * c + j] = x[r * c + j] * v[j];
  y.check_finite("mul_channel");
  if (detail::want_grad2(x, v)) {
    y.set_requires_grad(true);
    Tensor<T> xi = x, vi = v, yo = y;
    Tape<T>::active()->record([xi, vi, yo, rows, c]() mutable {
      const auto& gy = yo.grad();
      if (xi.requires_grad()) {
        auto& gx = xi.grad();
        for (long r = 0; r < rows; ++r)
          for (int j = 0; j < c; ++j) gx[r * c + j] += gy[r * c + j] * vi[j];
      }
      if (vi.requires_grad()) {
        auto& gv = vi.grad();
        for (long r = 0; r < rows; ++r)
          for (int j = 0; j < c; ++j) gv[j] += gy[r * c + j] * xi[r * c + j];
      }
    });
  }
  return y;
}

// Multiply an NHWC tensor by an NHW1 rate map broadcast over channels.
template <class T>
Tensor<T> mul_spatial(const Tensor<T>& x, const Tensor<T>& rate) {
  if (x.rank() != 4 || rate.rank() != 4 || rate.shape().back() != 1 ||
      rate.dim(0) != x.dim(0) || rate.dim(1) != x.dim(1) || rate.dim(2) != x.dim(2))
    throw std::invalid_argument("mul_spatial: rate must be NHW1 matching x");
  const int c = x.shape().back();
  Tensor<T> y(x.shape());
  const long pix = x.size() / c;
  for (long p = 0; p < pix; ++p)
    for (int j = 0; j < c; ++j) y[p * c + j] = x[p * c + j] * rate[p];
  y.check_finite("mul_spatial");
  if (detail::want_grad2(x, rate)) {
    y.set_requires_grad(true);
    Tensor<T> xi = x, ri = rate, yo = y;
    Tape<T>::active()->record([xi, ri, yo, pix, c]() mutable {
      const auto& gy = yo.grad();
      if (xi.requires_grad()) {
        auto& gx = xi.grad();
        for (long p = 0; p < pix; ++p)
          for (int j = 0; j < c; ++j) gx[p * c + j] += gy[p * c + j] * ri[p];
      }
      if (ri.requires_grad()) {
        auto& gr = ri.grad();
        for (long p = 0; p < pix; ++p)
          for (int j = 0; j < c; ++j) gr[p] += gy[p * c + j] * xi[p * c + j];
      }
    });
  }
  return y;
}

// Dense map over the last axis: x[..., Cin] @ w[Cin, Cout] + b.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const std::type_identity_t<Tensor<T>>* bias = nullptr) {
  if (w.rank() != 2) throw std::invalid_argument("linear: weight must be rank 2");
  const int cin = w.dim(0), cout = w.dim(1);
  if (x.shape().back() != cin) throw std::invalid_argument("linear: input channel mismatch");
  if (bias && bias->size() != cout) throw std::invalid_argument("linear: bias length mismatch");
  Shape os = x.shape();
  os.back() = cout;
  Tensor<T> y(os);
  const long rows = x.size() / cin;
  for (long r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * cin;
    T* yr = y.data() + r * cout;
    if (bias)
      for (int j = 0; j < cout; ++j) yr[j] = (*bias)[j];
    for (int i = 0; i < cin; ++i) {
      const T xv = xr[i];
      const T* wr = w.data() + static_cast<long>(i) * cout;
      for (int j = 0; j < cout; ++j) yr[j] += xv * wr[j];
    }
  }
  y.check_finite("linear");
  bool wants = Tape<T>::active() &&
               (x.requires_grad() || w.requires_grad() || (bias && bias->requires_grad()));
  if (wants) {
    y.set_requires_grad(true);
    Tensor<T> xi = x, wi = w, yo = y;
    Tensor<T> bi = bias ? *bias : Tensor<T>();
    bool has_bias = bias != nullptr;
    Tape<T>::active()->record([xi, wi, bi, yo, rows, cin, cout, has_bias]() mutable {
      const auto& gy = yo.grad();
      if (xi.requires_grad()) {
        auto& gx = xi.grad();
        for (long r = 0; r < rows; ++r)
          for (int i = 0; i < cin; ++i) {
            T s = T(0);
            const T* wr = wi.data() + static_cast<long>(i) * cout;
            for (int j = 0; j < cout; ++j) s += gy[r * cout + j] * wr[j];
            gx[r * cin + i] += s;
          }
      }
      if (wi.requires_grad()) {
        auto& gw = wi.grad();
        for (long r = 0; r < rows; ++r)
          for (int i = 0; i < cin; ++i) {
            const T xv = xi[r * cin + i];
            for (int j = 0; j < cout; ++j) gw[static_cast<long>(i) * cout + j] += xv * gy[r * cout + j];
          }
      }
      if (has_bias && bi.requires_grad()) {
        auto& gb = bi.grad();
        for (long r = 0; r < rows; ++r)
          for (int j = 0; j < cout; ++j) gb[j] += gy[r * cout + j];
      }
    });
  }
  return y;
}

// Numerically stabilized channel softmax for NHWC (or any tensor; last axis).
template <class T>
Tensor<T> softmax_channel(const Tensor<T>& x) {
  const int c = x.shape().back();
  if (c < 1) throw std::invalid_argument("softmax_channel: empty channel axis");
  Tensor<T> y(x.shape());
  const long rows = x.size() / c;
  for (long r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * c;
    T* yr = y.data() + r * c;
    T m = xr[0];
    for (int j = 1; j < c; ++j) m = std::max(m, xr[j]);
    T s = T(0);
    for (int j = 0; j < c; ++j) {
      yr[j] = std::exp(xr[j] - m);
      s += yr[j];
    }
    for (int j = 0; j < c; ++j) yr[j] /= s;
  }
  y.check_finite("softmax_channel");
  if (grad_enabled(x)) {
    y.set_requires_grad(true);
    Tensor<T> xi = x, yo = y;
    Tape<T>::active()->record([xi, yo, rows, c]() mutable {
      auto& gx = xi.grad();
      const auto& gy = yo.grad();
      for (long r = 0; r < rows; ++r) {
        const T* yr = yo.data() + r * c;
        T dot = T(0);
        for (int j = 0; j < c; ++j) dot += gy[r * c + j] * yr[j];
        for (int j = 0; j < c; ++j) gx[r * c + j] += yr[j] * (gy[r * c + j] - dot);
      }
    });
  }
  return y;
}

enum class NormKind { kBatch, kLayer };

// Running statistics for batch norm; owned by the layer, updated in training.
template <class T>
struct RunningStats {
  std::vector<T> mean;
  std::vector<T> var;
  T momentum = T(0.9);
  bool initialized = false;
};

// Layer mode normalizes over the channel axis per position; batch mode over
// batch x spatial per channel. gamma/beta are length-C.
template <class T>
Tensor<T> normalize(NormKind kind, const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta, T eps, RunningStats<T>* stats = nullptr,
                    bool training = true) {
  if (eps <= T(0)) throw std::invalid_argument("normalize: eps must be positive");
  const int c = x.shape().back();
  if (gamma.size() != c || beta.size() != c)
    throw std::invalid_argument("normalize: gamma/beta must have channel extent");
  const long rows = x.size() / c;
  Tensor<T> y(x.shape());
  bool wants = Tape<T>::active() &&
               (x.requires_grad() || gamma.requires_grad() || beta.requires_grad());

  if (kind == NormKind::kLayer) {
    std::vector<T> mu(rows), inv(rows);
    for (long r = 0; r < rows; ++r) {
      const T* xr = x.data() + r * c;
      T m = T(0);
      for (int j = 0; j < c; ++j) m += xr[j];
      m /= T(c);
      T v = T(0);
      for (int j = 0; j < c; ++j) v += (xr[j] - m) * (xr[j] - m);
      v /= T(c);
      mu[r] = m;
      inv[r] = T(1) / std::sqrt(v + eps);
      for (int j = 0; j < c; ++j) y[r * c + j] = (xr[j] - m) * inv[r] * gamma[j] + beta[j];
    }
    y.check_finite("normalize(layer)");
    if (wants) {
      y.set_requires_grad(true);
      Tensor<T> xi = x, gi = gamma, bi = beta, yo = y;
      Tape<T>::active()->record([xi, gi, bi, yo, mu, inv, rows, c]() mutable {
        const auto& gy = yo.grad();
        for (long r = 0; r < rows; ++r) {
          const T* xr = xi.data() + r * c;
          // xhat and the two reduction terms of the layer-norm backward
          T sum_g = T(0), sum_gx = T(0);
          for (int j = 0; j < c; ++j) {
            T xh = (xr[j] - mu[r]) * inv[r];
            T gl = gy[r * c + j] * gi[j];
            sum_g += gl;
            sum_gx += gl * xh;
          }
          if (xi.requires_grad()) {
            auto& gx = xi.grad();
            for (int j = 0; j < c; ++j) {
              T xh = (xr[j] - mu[r]) * inv[r];
              T gl = gy[r * c + j] * gi[j];
              gx[r * c + j] += inv[r] * (gl - sum_g / T(c) - xh * sum_gx / T(c));
            }
          }
          if (gi.requires_grad()) {
            auto& gg = gi.grad();
            for (int j = 0; j < c; ++j)
              gg[j] += gy[r * c + j] * (xr[j] - mu[r]) * inv[r];
          }
          if (bi.requires_grad()) {
            auto& gb = bi.grad();
            for (int j = 0; j < c; ++j) gb[j] += gy[r * c + j];
          }
        }
      });
    }
    return y;
  }

  // Batch mode.
  std::vector<T> mu(c, T(0)), var(c, T(0)), inv(c);
  if (training || stats == nullptr || !stats->initialized) {
    for (long r = 0; r < rows; ++r)
      for (int j = 0; j < c; ++j) mu[j] += x[r * c + j];
    for (int j = 0; j < c; ++j) mu[j] /= T(rows);
    for (long r = 0; r < rows; ++r)
      for (int j = 0; j < c; ++j) var[j] += (x[r * c + j] - mu[j]) * (x[r * c + j] - mu[j]);
    for (int j = 0; j < c; ++j) var[j] /= T(rows);
    if (stats && training) {
      if (!stats->initialized) {
        stats->mean = mu;
        stats->var = var;
        stats->initialized = true;
      } else {
        for (int j = 0; j < c; ++j) {
          stats->mean[j] = stats->momentum * stats->mean[j] + (T(1) - stats->momentum) * mu[j];
          stats->var[j] = stats->momentum * stats->var[j] + (T(1) - stats->momentum) * var[j];
        }
      }
    }
  } else {
    mu = stats->mean;
    var = stats->var;
  }
  for (int j = 0; j < c; ++j) inv[j] = T(1) / std::sqrt(var[j] + eps);
  for (long r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j)
      y[r * c + j] = (x[r * c + j] - mu[j]) * inv[j] * gamma[j] + beta[j];
  y.check_finite("normalize(batch)");
  if (wants) {
    y.set_requires_grad(true);
    bool stats_path = !training && stats != nullptr && stats->initialized;
    Tensor<T> xi = x, gi = gamma, bi = beta, yo = y;
    Tape<T>::active()->record([xi, gi, bi, yo, mu, inv, rows, c, stats_path]() mutable {
      const auto& gy = yo.grad();
      std::vector<T> sum_g(c, T(0)), sum_gx(c, T(0));
      for (long r = 0; r < rows; ++r)
        for (int j = 0; j < c; ++j) {
          T xh = (xi[r * c + j] - mu[j]) * inv[j];
          T gl = gy[r * c + j] * gi[j];
          sum_g[j] += gl;
          sum_gx[j] += gl * xh;
        }
      if (xi.requires_grad()) {
        auto& gx = xi.grad();
        for (long r = 0; r < rows; ++r)
          for (int j = 0; j < c; ++j) {
            T gl = gy[r * c + j] * gi[j];
            if (stats_path) {
              gx[r * c + j] += gl * inv[j];  // frozen statistics
            } else {
              T xh = (xi[r * c + j] - mu[j]) * inv[j];
              gx[r * c + j] += inv[j] * (gl - sum_g[j] / T(rows) - xh * sum_gx[j] / T(rows));
            }
          }
      }
      if (gi.requires_grad()) {
        auto& gg = gi.grad();
        for (long r = 0; r < rows; ++r)
          for (int j = 0; j < c; ++j)
            gg[j] += gy[r * c + j] * (xi[r * c + j] - mu[j]) * inv[j];
      }
      if (bi.requires_grad()) {
        auto& gb = bi.grad();
        for (long r = 0; r < rows; ++r)
          for (int j = 0; j < c; ++j) gb[j] += gy[r * c + j];
      }
    });
  }
  return y;
}

// 2x2 max pooling, stride 2, floor semantics on odd extents.
template <class T>
Tensor<T> pool_max2d(const Tensor<T>& x, int window = 2, int stride = 2) {
  if (x.rank() != 4) throw std::invalid_argument("pool_max2d: NHWC tensor required");
  if (window < 1 || stride < 1) throw std::invalid_argument("pool_max2d: bad window/stride");
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const int oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  if (oh < 1 || ow < 1) throw std::invalid_argument("pool_max2d: input smaller than window");
  Tensor<T> y({n, oh, ow, c});
  std::vector<long> argmax(static_cast<size_t>(y.size()));
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j)
        for (int k = 0; k < c; ++k) {
          T best = x.at(b, i * stride, j * stride, k);
          long arg = x.index(b, i * stride, j * stride, k);
          for (int di = 0; di < window; ++di)
            for (int dj = 0; dj < window; ++dj) {
              T v = x.at(b, i * stride + di, j * stride + dj, k);
              if (v > best) {
                best = v;
                arg = x.index(b, i * stride + di, j * stride + dj, k);
              }
            }
          long oi = y.index(b, i, j, k);
          y[oi] = best;
          argmax[static_cast<size_t>(oi)] = arg;
        }
  y.check_finite("pool_max2d");
  if (grad_enabled(x)) {
    y.set_requires_grad(true);
    Tensor<T> xi = x, yo = y;
    Tape<T>::active()->record([xi, yo, argmax]() mutable {
      auto& gx = xi.grad();
      const auto& gy = yo.grad();
      for (long i = 0; i < yo.size(); ++i) gx[argmax[static_cast<size_t>(i)]] += gy[i];
    });
  }
  return y;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank()) throw std::invalid_argument("concat_channels: rank mismatch");
  for (int i = 0; i + 1 < a.rank(); ++i)
    if (a.dim(i) != b.dim(i))
      throw std::invalid_argument("concat_channels: non-channel axes disagree");
  const int ca = a.shape().back(), cb = b.shape().back();
  Shape os = a.shape();
  os.back() = ca + cb;
  Tensor<T> y(os);
  const long rows = a.size() / ca;
  for (long r = 0; r < rows; ++r) {
    for (int j = 0; j < ca; ++j) y[r * (ca + cb) + j] = a[r * ca + j];
    for (int j = 0; j < cb; ++j) y[r * (ca + cb) + ca + j] = b[r * cb + j];
  }
  if (detail::want_grad2(a, b)) {
    y.set_requires_grad(true);
    Tensor<T> ai = a, bi = b, yo = y;
    Tape<T>::active()->record([ai, bi, yo, rows, ca, cb]() mutable {
      const auto& gy = yo.grad();
      if (ai.requires_grad()) {
        auto& ga = ai.grad();
        for (long r = 0; r < rows; ++r)
          for (int j = 0; j < ca; ++j) ga[r * ca + j] += gy[r * (ca + cb) + j];
      }
      if (bi.requires_grad()) {
        auto& gb = bi.grad();
        for (long r = 0; r < rows; ++r)
          for (int j = 0; j < cb; ++j) gb[r * cb + j] += gy[r * (ca + cb) + ca + j];
      }
    });
  }
  return y;
}

// Symmetric center crop, offsets floor((src - tgt)/2).
template <class T>
Tensor<T> crop_center(const Tensor<T>& x, int target_h, int target_w) {
  if (x.rank() != 4) throw std::invalid_argument("crop_center: NHWC tensor required");
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (target_h > h || target_w > w)
    throw std::invalid_argument("crop_center: target larger than source");
  const int oh = (h - target_h) / 2, ow = (w - target_w) / 2;
  Tensor<T> y({n, target_h, target_w, c});
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < target_h; ++i)
      for (int j = 0; j < target_w; ++j)
        for (int k = 0; k < c; ++k) y.at(b, i, j, k) = x.at(b, i + oh, j + ow, k);
  if (grad_enabled(x)) {
    y.set_requires_grad(true);
    Tensor<T> xi = x, yo = y;
    Tape<T>::active()->record([xi, yo, oh, ow]() mutable {
      auto& gx = xi.grad();
      const auto& gy = yo.grad();
      const int n2 = yo.dim(0), th = yo.dim(1), tw = yo.dim(2), c2 = yo.dim(3);
      for (int b = 0; b < n2; ++b)
        for (int i = 0; i < th; ++i)
          for (int j = 0; j < tw; ++j)
            for (int k = 0; k < c2; ++k)
              gx[xi.index(b, i + oh, j + ow, k)] += gy[yo.index(b, i, j, k)];
    });
  }
  return y;
}

// Elementwise quotient of two scalar (1-element) tensors.
template <class T>
Tensor<T> div_scalar(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.size() != 1 || b.size() != 1)
    throw std::invalid_argument("div_scalar: scalar tensors required");
  if (b[0] == T(0)) throw std::invalid_argument("div_scalar: division by zero");
  Tensor<T> y = Tensor<T>::scalar(a[0] / b[0]);
  y.check_finite("div_scalar");
  if (detail::want_grad2(a, b)) {
    y.set_requires_grad(true);
    Tensor<T> ai = a, bi = b, yo = y;
    Tape<T>::active()->record([ai, bi, yo]() mutable {
      T g = yo.grad()[0];
      if (ai.requires_grad()) ai.grad()[0] += g / bi[0];
      if (bi.requires_grad()) bi.grad()[0] -= g * ai[0] / (bi[0] * bi[0]);
    });
  }
  return y;
}

template <class T>
Tensor<T> he_uniform(Shape shape, long fan_in, Rng& rng) {
  if (fan_in < 1) throw std::invalid_argument("he_uniform: fan_in must be >= 1");
  T lim = std::sqrt(T(6) / static_cast<T>(fan_in));
  return random_uniform<T>(std::move(shape), rng, -lim, lim);
}

// log(clamp(x, lo, 1)) for cross-entropy; gradient zero where clamped.
template <class T>
Tensor<T> log_clamped(const Tensor<T>& x, T lo = T(1e-12)) {
  Tensor<T> y(x.shape());
  for (long i = 0; i < x.size(); ++i) y[i] = std::log(std::max(x[i], lo));
  y.check_finite("log_clamped");
  if (grad_enabled(x)) {
    y.set_requires_grad(true);
    Tensor<T> xi = x, yo = y;
    Tape<T>::active()->record([xi, yo, lo]() mutable {
      auto& gx = xi.grad();
      const auto& gy = yo.grad();
      for (long i = 0; i < xi.size(); ++i)
        if (xi[i] > lo) gx[i] += gy[i] / xi[i];
    });
  }
  return y;
}

}  // namespace mahnet
