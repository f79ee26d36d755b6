#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>

#include "deconf/common.hpp"
#include "deconf/matrix.hpp"

namespace deconf::numkit {

struct EigenSym {
  Vector values;   // descending
  Matrix vectors;  // columns, aligned with values
};

// Cyclic Jacobi rotations on a symmetric matrix; sweeps until the
// off-diagonal Frobenius norm drops below tol.
inline EigenSym jacobi_eigen_sym(Matrix a, double tol = 1e-10,
                                 std::size_t max_sweeps = 100) {
  if (a.rows != a.cols) throw DimensionError("jacobi: matrix must be square");
  const std::size_t n = a.rows;
  Matrix v = Matrix::identity(n);

  auto off_norm = [&a, n]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a.at(i, j) * a.at(i, j);
    return std::sqrt(s);
  };

  for (std::size_t sweep = 0; sweep < max_sweeps && off_norm() >= tol;
       ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (std::abs(apq) < tol * 1e-3) continue;
        const double app = a.at(p, p);
        const double aqq = a.at(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a.at(k, p);
          const double akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a.at(p, k);
          const double aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v.at(k, p);
          const double vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  EigenSym out;
  out.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.values[i] = a.at(i, i);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&out](std::size_t x, std::size_t y) {
    return out.values[x] > out.values[y];
  });

  EigenSym sorted;
  sorted.values.resize(n);
  sorted.vectors = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    sorted.values[j] = out.values[order[j]];
    // Sign convention: the largest-magnitude entry is positive.
    std::size_t arg = 0;
    for (std::size_t k = 1; k < n; ++k) {
      if (std::abs(v.at(k, order[j])) > std::abs(v.at(arg, order[j]))) arg = k;
    }
    const double sign = v.at(arg, order[j]) >= 0.0 ? 1.0 : -1.0;
    for (std::size_t k = 0; k < n; ++k) {
      sorted.vectors.at(k, j) = sign * v.at(k, order[j]);
    }
  }
  return sorted;
}

struct PcaResult {
  Matrix projected;     // U x S
  Matrix basis;         // K x S, orthonormal columns
  Vector column_means;  // K
  Vector eigenvalues;   // S, descending
};

// Centers columns, eigendecomposes the K x K covariance, and projects onto
// the top-S principal directions.
inline PcaResult pca_project(const Matrix& x, std::size_t out_dim) {
  if (x.rows < 2) throw ParameterError("pca_project: need at least 2 rows");
  if (out_dim > x.cols || out_dim == 0) {
    throw ParameterError("pca_project: out_dim must be in [1, cols]");
  }
  const std::size_t u = x.rows;
  const std::size_t k = x.cols;

  PcaResult res;
  res.column_means.assign(k, 0.0);
  for (std::size_t i = 0; i < u; ++i)
    for (std::size_t j = 0; j < k; ++j) res.column_means[j] += x.at(i, j);
  for (auto& m : res.column_means) m /= static_cast<double>(u);

  Matrix centered(u, k);
  for (std::size_t i = 0; i < u; ++i)
    for (std::size_t j = 0; j < k; ++j)
      centered.at(i, j) = x.at(i, j) - res.column_means[j];

  Matrix cov(k, k);
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a; b < k; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < u; ++i)
        s += centered.at(i, a) * centered.at(i, b);
      s /= static_cast<double>(u - 1);
      cov.at(a, b) = s;
      cov.at(b, a) = s;
    }
  }

  const EigenSym eig = jacobi_eigen_sym(cov);
  res.basis = Matrix(k, out_dim);
  res.eigenvalues.assign(eig.values.begin(), eig.values.begin() + out_dim);
  for (std::size_t j = 0; j < out_dim; ++j)
    for (std::size_t i = 0; i < k; ++i)
      res.basis.at(i, j) = eig.vectors.at(i, j);

  res.projected = Matrix(u, out_dim);
  for (std::size_t i = 0; i < u; ++i) {
    for (std::size_t j = 0; j < out_dim; ++j) {
      double s = 0.0;
      for (std::size_t d = 0; d < k; ++d)
        s += centered.at(i, d) * res.basis.at(d, j);
      res.projected.at(i, j) = s;
    }
  }
  return res;
}

}  // namespace deconf::numkit
