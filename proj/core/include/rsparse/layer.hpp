#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rsparse/matrix.hpp"
#include "rsparse/scores.hpp"
#include "rsparse/sparsity.hpp"
#include "rsparse/svd.hpp"

namespace rsparse {

// Element width used for file storage and I/O accounting (32-bit floats).
inline constexpr std::uint64_t kFileElementBytes = 4;

// Weight matrix laid out column-major over the input dimension, so the
// gather kernel reads one contiguous block per kept input channel.
struct ColMajorMatrix {
  std::size_t rows = 0;  // m_out
  std::size_t cols = 0;  // m_in
  std::vector<double> data;  // data[j * rows + i] == W(i, j)

  double at(std::size_t r, std::size_t c) const { return data[c * rows + r]; }
  std::span<const double> column(std::size_t c) const {
    return std::span<const double>(data.data() + c * rows, rows);
  }

  static ColMajorMatrix from_row_major(const Matrix& w);
  Matrix to_row_major() const;

  bool operator==(const ColMajorMatrix& other) const = default;
};

// A linear layer split into a gathered sparse path over the original weights
// and a low-rank residual path through score-selected SVD factors.
struct DecomposedLayer {
  std::size_t m_in = 0;
  std::size_t m_out = 0;
  ColMajorMatrix w_cols;                       // original W, column-major
  Matrix a_r;                                  // m_out x r; U_r * sqrt(Sigma_r)
  Matrix b_r;                                  // r x m_in;  sqrt(Sigma_r) * Vt_r
  SparsityPlan plan;
  std::vector<std::size_t> selected_components;

  bool operator==(const DecomposedLayer& other) const = default;
};

struct IoReport {
  std::uint64_t dense_bytes = 0;
  std::uint64_t touched_bytes = 0;
  double relative_cost = 0.0;  // r*(m+n)/(m*n) + s, analytic
};

// Offline split. selected_components come from the score matrix; the factors
// absorb sqrt(sigma) on both sides. Throws on rank overflow or score shape
// mismatch.
DecomposedLayer decompose(const Matrix& w, const SparsityPlan& plan, const ScoreMatrix& score);

// Same split with a precomputed SVD of w (the search path reuses one SVD per
// layer across many candidate plans).
DecomposedLayer decompose_with_svd(const Matrix& w, const SparsityPlan& plan,
                                   const ScoreMatrix& score, const SvdResult& svd);

// y = sum_{j in kept} x_j * column j, accumulated in ascending index order.
// Touches only the kept columns. Optionally accumulates the weight bytes
// touched (at file element width) into *touched_bytes.
std::vector<double> gather_matvec(const ColMajorMatrix& w_cols, std::span<const double> x,
                                  std::span<const std::size_t> kept,
                                  std::uint64_t* touched_bytes = nullptr);

// Online pass: top-k sparse channels through the gathered original weights,
// the complement through the low-rank factors.
std::vector<double> forward(const DecomposedLayer& layer, std::span<const double> x);

IoReport io_cost(const DecomposedLayer& layer);

// Wall-clock proxy for the memory-bound decode matvec, run on 32-bit buffers.
struct BenchReport {
  std::size_t m_in = 0;
  std::size_t m_out = 0;
  double keep_fraction = 0.0;
  double dense_ns_median = 0.0;
  double gather_ns_median = 0.0;
  std::uint64_t dense_bytes = 0;    // weight bytes per dense call
  std::uint64_t touched_bytes = 0;  // weight bytes per gather call
  double touched_ratio = 0.0;
};

BenchReport bench_matvec(std::size_t m_in, std::size_t m_out, double keep_fraction,
                         std::size_t repetitions, std::uint64_t seed = 42);

// RSPL container: magic, version, dims, column-major sparse weights,
// low-rank factors, selected components, plan. 32-bit little-endian floats.
void write_decomposed_layer(const DecomposedLayer& layer, const std::string& path);
DecomposedLayer read_decomposed_layer(const std::string& path);

}  // namespace rsparse
