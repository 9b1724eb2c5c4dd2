#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "plaindet/errors.hpp"
#include "plaindet/rng.hpp"

namespace plaindet {

// Dense row-major double matrix. The only numeric container in the project;
// vectors are 1xN or Nx1 matrices where convenient.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols) : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, 0.0) {}
  Matrix(int rows, int cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != static_cast<std::size_t>(rows_) * cols_)
      throw Error::shape("matrix data size does not match rows*cols");
  }

  static Matrix zeros(int rows, int cols) { return Matrix(rows, cols); }

  static Matrix full(int rows, int cols, double v) {
    Matrix m(rows, cols);
    for (auto& x : m.data_) x = v;
    return m;
  }

  static Matrix identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    int r = static_cast<int>(rows.size());
    int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
    Matrix m(r, c);
    int i = 0;
    for (const auto& row : rows) {
      if (static_cast<int>(row.size()) != c)
        throw Error::shape("ragged initializer for matrix");
      int j = 0;
      for (double v : row) m.at(i, j++) = v;
      ++i;
    }
    return m;
  }

  static Matrix uniform(int rows, int cols, Rng& rng, double lo, double hi) {
    Matrix m(rows, cols);
    for (auto& x : m.data_) x = rng.uniform(lo, hi);
    return m;
  }

  static Matrix normal(int rows, int cols, Rng& rng, double stddev = 1.0) {
    Matrix m(rows, cols);
    for (auto& x : m.data_) x = stddev * rng.normal();
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* row(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  const double* row(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double row_norm(int r) const {
    double s = 0.0;
    const double* p = row(r);
    for (int j = 0; j < cols_; ++j) s += p[j] * p[j];
    return std::sqrt(s);
  }

  Matrix row_copy(int r) const {
    Matrix m(1, cols_);
    for (int j = 0; j < cols_; ++j) m.at(0, j) = at(r, j);
    return m;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

// C = A * B
Matrix matmul(const Matrix& a, const Matrix& b);
// C = A * B^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// C = A^T * B
Matrix matmul_tn(const Matrix& a, const Matrix& b);

double dot_rows(const Matrix& a, int i, const Matrix& b, int j);
double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace plaindet
