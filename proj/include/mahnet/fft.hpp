#pragma once

// Iterative radix-2 FFT and real-sequence helpers. Non-power-of-two
// lengths are zero-padded to the next power of two; ifft_real truncates
// back to the caller's length.

#include <complex>
#include <vector>

#include "mahnet/tensor.hpp"

namespace mahnet {

using Complex = std::complex<double>;

inline size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

inline void fft_inplace(std::vector<Complex>& a, bool inverse) {
  const size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft_inplace: length must be a power of two");
  // bit reversal
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const double pi = 3.14159265358979323846;
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = 2 * pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    Complex wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      Complex w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        Complex u = a[i + j];
        Complex v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse)
    for (auto& x : a) x /= static_cast<double>(n);
}

// Spectrum of a real sequence; length is next_pow2(n).
inline std::vector<Complex> fft_real(const std::vector<double>& x) {
  if (x.empty()) throw std::invalid_argument("fft_real: empty sequence");
  std::vector<Complex> a(next_pow2(x.size()), Complex(0, 0));
  for (size_t i = 0; i < x.size(); ++i) a[i] = Complex(x[i], 0);
  fft_inplace(a, false);
  return a;
}

inline std::vector<double> ifft_real(std::vector<Complex> spectrum, size_t n) {
  if (n < 1 || n > spectrum.size()) throw std::invalid_argument("ifft_real: bad target length");
  fft_inplace(spectrum, true);
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = spectrum[i].real();
  return out;
}

}  // namespace mahnet
