#pragma once

// Dense row-major matrix type and the few kernels the network needs.
// Products are delegated to Eigen through zero-copy maps.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace fsmn {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
      throw ShapeError("Matrix: " + std::to_string(values_.size()) +
                       " values do not fill a " + shape_string(rows, cols) +
                       " matrix");
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    values_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer");
      values_.insert(values_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  double* row(std::size_t r) { return values_.data() + r * cols_; }
  const double* row(std::size_t r) const { return values_.data() + r * cols_; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  std::string shape() const { return shape_string(rows_, cols_); }

  static std::string shape_string(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

namespace detail {

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape() + " vs " +
                     b.shape());
  }
}

inline void require_nonempty(const Matrix& a, const char* op) {
  if (a.rows() == 0 || a.cols() == 0) {
    throw ShapeError(std::string(op) + ": empty operand " + a.shape());
  }
}

}  // namespace detail

namespace detail {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const RowMajor> view(const Matrix& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

inline Eigen::Map<RowMajor> view(Matrix& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

}  // namespace detail

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/// C = A·B.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + a.shape() + " by " + b.shape());
  }
  detail::require_nonempty(a, "matmul");
  detail::require_nonempty(b, "matmul");
  Matrix c(a.rows(), b.cols());
  detail::view(c).noalias() = detail::view(a) * detail::view(b);
  return c;
}

/// C = Aᵀ·B.
inline Matrix matmul_at(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_at: cannot multiply transpose of " + a.shape() + " by " +
                     b.shape());
  }
  detail::require_nonempty(a, "matmul_at");
  detail::require_nonempty(b, "matmul_at");
  Matrix c(a.cols(), b.cols());
  detail::view(c).noalias() = detail::view(a).transpose() * detail::view(b);
  return c;
}

/// C = A·Bᵀ.
inline Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_bt: cannot multiply " + a.shape() + " by transpose of " +
                     b.shape());
  }
  detail::require_nonempty(a, "matmul_bt");
  detail::require_nonempty(b, "matmul_bt");
  Matrix c(a.rows(), b.rows());
  detail::view(c).noalias() = detail::view(a) * detail::view(b).transpose();
  return c;
}


inline Matrix relu(Matrix x) {
  for (double& v : x.values()) v = v > 0.0 ? v : 0.0;
  return x;
}

/// Gradient through ReLU given the pre-activation X. Zero at x <= 0.
inline Matrix relu_backward(const Matrix& x, Matrix g) {
  detail::require_same_shape(x, g, "relu_backward");
  const double* xv = x.data();
  double* gv = g.data();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(xv[i] > 0.0)) gv[i] = 0.0;
  return g;
}

/// a += b
inline void add_inplace(Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "add_inplace");
  double* av = a.data();
  const double* bv = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) av[i] += bv[i];
}

/// Adds column vector `bias` (rows x 1) to every column of `a`.
inline void add_column_inplace(Matrix& a, const Matrix& bias) {
  if (bias.rows() != a.rows() || bias.cols() != 1) {
    throw ShapeError("add_column_inplace: bias " + bias.shape() + " does not fit " +
                     a.shape());
  }
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* r = a.row(i);
    const double b = bias(i, 0);
    for (std::size_t j = 0; j < a.cols(); ++j) r[j] += b;
  }
}

/// Sum over columns: (rows x 1).
inline Matrix row_sums(const Matrix& a) {
  Matrix s(a.rows(), 1);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* r = a.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) acc += r[j];
    s(i, 0) = acc;
  }
  return s;
}

inline Matrix scaled(Matrix a, double k) {
  for (double& v : a.values()) v *= k;
  return a;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline bool all_finite(const Matrix& a) {
  return std::all_of(a.values().begin(), a.values().end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace fsmn
