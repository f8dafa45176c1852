#pragma once

// State-space math: continuous LTI system, bilinear discretization,
// recurrent scan, explicit convolution kernel, FFT-based causal
// convolution, HiPPO-LegS initialization and the input-dependent
// (selective) scan.

#include <Eigen/Dense>

#include "mahnet/fft.hpp"

namespace mahnet {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

struct ContinuousSSM {
  MatrixXd A;     // n x n state matrix
  VectorXd B;     // n x 1 input matrix
  RowVectorXd C;  // 1 x n output matrix
  double D = 0.0;  // optional feedthrough

  int state_dim() const { return static_cast<int>(A.rows()); }

  void validate() const {
    if (A.rows() != A.cols()) throw std::invalid_argument("ContinuousSSM: A must be square");
    if (B.size() != A.rows() || C.size() != A.rows())
      throw std::invalid_argument("ContinuousSSM: B/C dimension mismatch");
  }
};

struct DiscreteSSM {
  MatrixXd Abar;
  VectorXd Bbar;
  RowVectorXd Cbar;
  double D = 0.0;
  double delta = 0.0;

  int state_dim() const { return static_cast<int>(Abar.rows()); }
};

struct SSMKernel {
  std::vector<double> k;  // (CB, CAB, ..., CA^{L-1}B)
  double D = 0.0;
  int length() const { return static_cast<int>(k.size()); }
};

// Lower-triangular HiPPO-LegS matrix:
//   A[i][i] = -(i+1),  A[i][j] = -sqrt(2i+1)*sqrt(2j+1) for i > j.
inline MatrixXd hippo_legs(int n) {
  if (n < 1) throw std::invalid_argument("hippo_legs: state dimension must be >= 1");
  MatrixXd a = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    a(i, i) = -static_cast<double>(i + 1);
    for (int j = 0; j < i; ++j)
      a(i, j) = -std::sqrt(2.0 * i + 1.0) * std::sqrt(2.0 * j + 1.0);
  }
  return a;
}

// Tustin transform: Abar = (I - d/2 A)^-1 (I + d/2 A), Bbar = (I - d/2 A)^-1 d B.
inline DiscreteSSM discretize_bilinear(const ContinuousSSM& ssm, double delta) {
  ssm.validate();
  if (delta <= 0.0) throw std::invalid_argument("discretize_bilinear: delta must be positive");
  const int n = ssm.state_dim();
  MatrixXd left = MatrixXd::Identity(n, n) - (delta / 2.0) * ssm.A;
  if (!Eigen::FullPivLU<MatrixXd>(left).isInvertible())
    throw std::runtime_error("discretize_bilinear: (I - delta/2 A) is singular");
  // Same solver as the per-step selective path so the two agree bit-for-bit.
  Eigen::PartialPivLU<MatrixXd> lu(left);
  DiscreteSSM d;
  d.Abar = lu.solve(MatrixXd::Identity(n, n) + (delta / 2.0) * ssm.A);
  d.Bbar = lu.solve(delta * ssm.B);
  d.Cbar = ssm.C;
  d.D = ssm.D;
  d.delta = delta;
  return d;
}

// x_k = Abar x_{k-1} + Bbar u_k, y_k = Cbar x_k (+ D u_k); x_{-1} = 0.
inline std::vector<double> scan_recurrent(const DiscreteSSM& d, const std::vector<double>& u,
                                          const VectorXd* x_init = nullptr) {
  if (u.empty()) throw std::invalid_argument("scan_recurrent: empty input");
  VectorXd x = x_init ? *x_init : VectorXd::Zero(d.state_dim());
  std::vector<double> y(u.size());
  for (size_t k = 0; k < u.size(); ++k) {
    x = d.Abar * x + d.Bbar * u[k];
    y[k] = d.Cbar.dot(x) + d.D * u[k];
  }
  return y;
}

// k[i] = Cbar Abar^i Bbar via a running state vector, O(L n^2).
inline SSMKernel ssm_kernel(const DiscreteSSM& d, int length) {
  if (length < 1) throw std::invalid_argument("ssm_kernel: length must be >= 1");
  SSMKernel kern;
  kern.k.resize(static_cast<size_t>(length));
  kern.D = d.D;
  VectorXd state = d.Bbar;  // Abar^0 B
  for (int i = 0; i < length; ++i) {
    kern.k[static_cast<size_t>(i)] = d.Cbar.dot(state);
    if (i + 1 < length) state = d.Abar * state;
  }
  for (double v : kern.k)
    if (!std::isfinite(v)) throw std::runtime_error("ssm_kernel: non-finite kernel value");
  return kern;
}

enum class ConvMethod { kDirect, kFft };

// Causal (non-circular) convolution y_k = sum_{j<=k} k[j] u[k-j] (+ D u_k).
inline std::vector<double> convolve_causal(const SSMKernel& kern, const std::vector<double>& u,
                                           ConvMethod method) {
  const size_t L = u.size();
  if (kern.k.size() != L)
    throw std::invalid_argument("convolve_causal: kernel and input lengths differ");
  std::vector<double> y(L, 0.0);
  if (method == ConvMethod::kDirect) {
    for (size_t k = 0; k < L; ++k) {
      double s = 0.0;
      for (size_t j = 0; j <= k; ++j) s += kern.k[j] * u[k - j];
      y[k] = s;
    }
  } else {
    // Zero-pad to >= 2L-1 so the circular product carries no wraparound.
    size_t m = next_pow2(2 * L - 1);
    std::vector<Complex> ka(m, Complex(0, 0)), ua(m, Complex(0, 0));
    for (size_t i = 0; i < L; ++i) {
      ka[i] = Complex(kern.k[i], 0);
      ua[i] = Complex(u[i], 0);
    }
    fft_inplace(ka, false);
    fft_inplace(ua, false);
    for (size_t i = 0; i < m; ++i) ka[i] *= ua[i];
    fft_inplace(ka, true);
    for (size_t i = 0; i < L; ++i) y[i] = ka[i].real();
  }
  if (kern.D != 0.0)
    for (size_t i = 0; i < L; ++i) y[i] += kern.D * u[i];
  return y;
}

// Per-timestep parameters of the selective (input-dependent) scan.
struct SelectiveParams {
  std::vector<double> delta;   // length L, all positive
  std::vector<VectorXd> B;     // length L, each n x 1
  std::vector<RowVectorXd> C;  // length L, each 1 x n
  double D = 0.0;
};

// Per step: bilinear-discretize (A, B_t) with delta_t, then
// x_t = Abar_t x_{t-1} + Bbar_t u_t, y_t = C_t x_t (+ D u_t).
inline std::vector<double> selective_scan(const SelectiveParams& p, const MatrixXd& A,
                                          const std::vector<double>& u) {
  const size_t L = u.size();
  if (p.delta.size() != L || p.B.size() != L || p.C.size() != L)
    throw std::invalid_argument("selective_scan: parameter sequences must match input length");
  const int n = static_cast<int>(A.rows());
  VectorXd x = VectorXd::Zero(n);
  std::vector<double> y(L);
  MatrixXd eye = MatrixXd::Identity(n, n);
  for (size_t t = 0; t < L; ++t) {
    if (p.delta[t] <= 0.0) throw std::invalid_argument("selective_scan: non-positive delta_t");
    Eigen::PartialPivLU<MatrixXd> lu(eye - (p.delta[t] / 2.0) * A);
    MatrixXd abar = lu.solve(eye + (p.delta[t] / 2.0) * A);
    VectorXd bbar = lu.solve(p.delta[t] * p.B[t]);
    x = abar * x + bbar * u[t];
    y[t] = p.C[t].dot(x) + p.D * u[t];
  }
  return y;
}

inline double spectral_radius(const MatrixXd& m) {
  Eigen::EigenSolver<MatrixXd> es(m, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline double max_real_eigenvalue(const MatrixXd& m) {
  Eigen::EigenSolver<MatrixXd> es(m, false);
  return es.eigenvalues().real().maxCoeff();
}

}  // namespace mahnet
