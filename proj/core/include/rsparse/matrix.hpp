#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rsparse/errors.hpp"

namespace rsparse {

// Dense row-major matrix of doubles. Entries are validated finite on
// construction; shapes are immutable after construction.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_.data() + r * cols_, cols_);
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  const std::vector<double>& values() const { return data_; }

  bool operator==(const Matrix& other) const = default;

  static Matrix identity(std::size_t n);
  static Matrix zeros(std::size_t rows, std::size_t cols);

  // throws usage_error if any entry is NaN/Inf
  void check_finite() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Standard product with a fixed left-to-right accumulation over the inner
// dimension, so results are bit-reproducible.
Matrix matmul(const Matrix& a, const Matrix& b);

// y = m * x  (x has m.cols() entries, y has m.rows())
std::vector<double> matvec(const Matrix& m, std::span<const double> x);

Matrix transpose(const Matrix& m);

double frobenius_norm(const Matrix& m);

double vector_norm(std::span<const double> v);

// Indices of the k entries of largest magnitude, ties broken toward the lower
// index, returned ascending. k > x.size() is an error.
std::vector<std::size_t> top_k_by_magnitude(std::span<const double> x, std::size_t k);

}  // namespace rsparse
