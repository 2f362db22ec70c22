#include "rsparse/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace rsparse {

namespace {

std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw usage_error("matrix data length " + std::to_string(data_.size()) +
                      " does not match shape " + shape_str(rows_, cols_));
  }
  check_finite();
}

void Matrix::check_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) {
      throw usage_error("matrix of shape " + shape_str(rows_, cols_) +
                        " contains a non-finite entry");
    }
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw usage_error("matmul shape mismatch: " + shape_str(a.rows(), a.cols()) +
                      " x " + shape_str(b.rows(), b.cols()));
  }
  Matrix c(a.rows(), b.cols());
  // i,k,j order: same left-to-right sum over k as the textbook triple loop,
  // but streams through b rows.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* crow = c.data() + i * c.cols();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const double* brow = b.data() + k * b.cols();
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

std::vector<double> matvec(const Matrix& m, std::span<const double> x) {
  if (m.cols() != x.size()) {
    throw usage_error("matvec shape mismatch: " + shape_str(m.rows(), m.cols()) +
                      " x vector of length " + std::to_string(x.size()));
  }
  std::vector<double> y(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double* row = m.data() + i * m.cols();
    double acc = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
  return y;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v * v;
  return std::sqrt(s);
}

double vector_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<std::size_t> top_k_by_magnitude(std::span<const double> x, std::size_t k) {
  if (k > x.size()) {
    throw usage_error("top_k_by_magnitude: k=" + std::to_string(k) +
                      " exceeds vector length " + std::to_string(x.size()));
  }
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // larger magnitude first; equal magnitudes keep the lower index first
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const double ma = std::fabs(x[a]);
    const double mb = std::fabs(x[b]);
    if (ma != mb) return ma > mb;
    return a < b;
  });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace rsparse
