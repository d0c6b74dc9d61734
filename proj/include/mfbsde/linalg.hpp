#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mfbsde/common.hpp"

namespace mfbsde {

// Symmetric matrix of dimension <= 3, row-major with fixed 3x3 storage.
struct SymMat {
  int dim = 1;
  std::array<double, 9> a{};  // only the leading dim x dim block is used

  double& at(int i, int j) { return a[static_cast<std::size_t>(3 * i + j)]; }
  double at(int i, int j) const { return a[static_cast<std::size_t>(3 * i + j)]; }

  static SymMat zero(int d) {
    SymMat m;
    m.dim = d;
    return m;
  }
  static SymMat scalar(double v) {
    SymMat m;
    m.dim = 1;
    m.at(0, 0) = v;
    return m;
  }
  double scalar_value() const { return at(0, 0); }
};

namespace linalg {

// Cyclic Jacobi eigendecomposition for symmetric dim<=3. Returns eigenvalues
// in `evals` and orthonormal eigenvectors as columns of `evecs`.
inline void jacobi_eigen(const SymMat& m, std::array<double, 3>& evals,
                         std::array<double, 9>& evecs) {
  int n = m.dim;
  std::array<double, 9> a = m.a;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) evecs[static_cast<std::size_t>(3 * i + j)] = (i == j) ? 1.0 : 0.0;
  auto A = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(3 * i + j)]; };
  auto V = [&](int i, int j) -> double& { return evecs[static_cast<std::size_t>(3 * i + j)]; };
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += A(p, q) * A(p, q);
    if (off < 1e-30) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(A(p, q)) < 1e-300) continue;
        double theta = (A(q, q) - A(p, p)) / (2.0 * A(p, q));
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = A(k, p), akq = A(k, q);
          A(k, p) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = A(p, k), aqk = A(q, k);
          A(p, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = V(k, p), vkq = V(k, q);
          V(k, p) = c * vkp - s * vkq;
          V(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  for (int i = 0; i < n; ++i) evals[static_cast<std::size_t>(i)] = A(i, i);
}

// Symmetric square root of a nonnegative-definite matrix (dim <= 3).
// Small negative eigenvalues from rounding are clamped to zero.
inline SymMat sym_sqrt(const SymMat& m) {
  if (m.dim == 1) {
    double v = m.at(0, 0);
    require(v >= -1e-12, "sym_sqrt: negative scalar");
    return SymMat::scalar(std::sqrt(std::max(0.0, v)));
  }
  std::array<double, 3> ev{};
  std::array<double, 9> q{};
  jacobi_eigen(m, ev, q);
  SymMat r = SymMat::zero(m.dim);
  for (int i = 0; i < m.dim; ++i)
    for (int j = 0; j < m.dim; ++j) {
      double s = 0;
      for (int k = 0; k < m.dim; ++k) {
        double lam = std::max(0.0, ev[static_cast<std::size_t>(k)]);
        s += q[static_cast<std::size_t>(3 * i + k)] * std::sqrt(lam) *
             q[static_cast<std::size_t>(3 * j + k)];
      }
      r.at(i, j) = s;
    }
  return r;
}

// Ordinary least squares via normal equations with Cholesky; a tiny ridge
// is added on (near-)singular systems so degenerate bases stay solvable.
// X is row-major n x p. Returns coefficient vector of length p.
inline std::vector<double> lstsq(const std::vector<double>& X,
                                 const std::vector<double>& y, std::size_t n,
                                 std::size_t p) {
  std::vector<double> G(p * p, 0.0), b(p, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = &X[r * p];
    for (std::size_t i = 0; i < p; ++i) {
      b[i] += row[i] * y[r];
      for (std::size_t j = i; j < p; ++j) G[i * p + j] += row[i] * row[j];
    }
  }
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < i; ++j) G[i * p + j] = G[j * p + i];
  double trace = 0;
  for (std::size_t i = 0; i < p; ++i) trace += G[i * p + i];
  double ridge = 0.0;
  for (int attempt = 0; attempt < 3; ++attempt) {
    std::vector<double> L(p * p, 0.0);
    bool ok = true;
    for (std::size_t i = 0; i < p && ok; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        double s = G[i * p + j] + ((i == j) ? ridge : 0.0);
        for (std::size_t k = 0; k < j; ++k) s -= L[i * p + k] * L[j * p + k];
        if (i == j) {
          if (s <= 1e-14 * std::max(trace, 1.0)) {
            ok = false;
            break;
          }
          L[i * p + i] = std::sqrt(s);
        } else {
          L[i * p + j] = s / L[j * p + j];
        }
      }
    }
    if (!ok) {
      ridge = (ridge == 0.0) ? 1e-10 * std::max(trace, 1.0) : ridge * 1e4;
      continue;
    }
    std::vector<double> z(p, 0.0), beta(p, 0.0);
    for (std::size_t i = 0; i < p; ++i) {
      double s = b[i];
      for (std::size_t k = 0; k < i; ++k) s -= L[i * p + k] * z[k];
      z[i] = s / L[i * p + i];
    }
    for (std::size_t ii = p; ii-- > 0;) {
      double s = z[ii];
      for (std::size_t k = ii + 1; k < p; ++k) s -= L[k * p + ii] * beta[k];
      beta[ii] = s / L[ii * p + ii];
    }
    return beta;
  }
  return std::vector<double>(p, 0.0);
}

}  // namespace linalg
}  // namespace mfbsde
