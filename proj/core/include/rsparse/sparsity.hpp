#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rsparse/matrix.hpp"

namespace rsparse {

// Strictly descending threshold ladder T_0 > T_1 > ... > T_{l-1}.
// l thresholds define l-1 midpoint bins; l == 1 degenerates to masking.
struct PhaseThresholds {
  std::vector<double> thresholds;

  explicit PhaseThresholds(std::vector<double> t);

  std::size_t levels() const { return thresholds.size(); }
  std::size_t num_bins() const { return thresholds.size() - 1; }
};

// Per-token split of a down-projection input into exactly-kept channels and
// binned channels whose contribution collapses to one bias vector per bin.
struct BiasDecomposition {
  std::vector<bool> sparse_mask;       // channel kept unchanged (h_k >= T_0)
  std::vector<int> bin_assignment;     // bin index for binned channels, -1 otherwise
  std::vector<std::vector<double>> biases;  // one vector per bin

  std::size_t output_dim() const { return biases.empty() ? 0 : biases[0].size(); }
};

// Per-layer compression knobs: fraction of input channels kept exactly and
// the rank routed through the low-rank factors.
struct SparsityPlan {
  double keep_fraction = 1.0;  // s in [0, 1]
  std::size_t rank = 0;        // r in [0, min(m_in, m_out)]

  bool operator==(const SparsityPlan& other) const = default;
};

// Keeps the ceil(s * len) largest-magnitude entries (lower index on ties),
// zeroes the rest. Returns the sparse vector and the kept indices ascending.
std::pair<std::vector<double>, std::vector<std::size_t>> threshold_sparsify(
    std::span<const double> x, double keep_fraction);

// Values >= T_0 pass through; values in [T_{i+1}, T_i) collapse to the bin
// midpoint; values below T_{l-1} clamp into the lowest bin. With a single
// threshold there is no bin and sub-threshold values are masked to zero.
std::vector<double> multiphase_relu(std::span<const double> x, const PhaseThresholds& t);

// Splits w_down * h into the exactly-kept part plus per-bin biases
// B_j = midpoint_j * sum of the w_down columns in bin j. Lossless against
// multiphase_relu(h) pushed through w_down.
BiasDecomposition residual_bias_decompose(std::span<const double> h, const Matrix& w_down,
                                          const PhaseThresholds& t);

// Frobenius norm squared over the largest singular value squared.
// Errors on the zero matrix.
double stable_rank(const Matrix& m);

// Concatenates two-bin decompositions columnwise: column 2i is token i's
// B_0, column 2i+1 its B_1. All decompositions must share the output
// dimension and carry exactly two bins.
Matrix bias_matrix(std::span<const BiasDecomposition> tokens);

}  // namespace rsparse
