#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>
#include <string>
#include <vector>

#include "deconf/common.hpp"

namespace deconf::numkit {

using Vector = std::vector<double>;

// Dense row-major matrix of 64-bit floats.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vector data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }

  std::size_t size() const { return data.size(); }

  static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c); }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }

  bool same_shape(const Matrix& other) const {
    return rows == other.rows && cols == other.cols;
  }
};

// Dense row-major matrix of small non-negative integers (ratings 0..5,
// exposure indicators 0/1).
struct ByteMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> data;

  ByteMatrix() = default;
  ByteMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0) {}

  std::uint8_t& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  std::uint8_t at(std::size_t i, std::size_t j) const {
    return data[i * cols + j];
  }

  const std::uint8_t* row(std::size_t i) const {
    return data.data() + i * cols;
  }
  std::uint8_t* row(std::size_t i) { return data.data() + i * cols; }
};

inline void require_finite(const Vector& v, const std::string& what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw ValidationError(what + " contains a non-finite value");
    }
  }
}

inline Vector row_as_vector(const ByteMatrix& m, std::size_t i) {
  Vector v(m.cols);
  for (std::size_t j = 0; j < m.cols; ++j) v[j] = static_cast<double>(m.at(i, j));
  return v;
}

inline Vector row_as_vector(const Matrix& m, std::size_t i) {
  return Vector(m.row(i), m.row(i) + m.cols);
}

}  // namespace deconf::numkit
