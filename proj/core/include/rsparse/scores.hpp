#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rsparse/matrix.hpp"
#include "rsparse/svd.hpp"

namespace rsparse {

// Aggregated contribution of each (singular component, input channel) pair,
// shape (num components x input dim). Entries are non-negative.
struct ScoreMatrix {
  Matrix values;
  std::size_t token_count = 0;
  std::string layer_id;
};

// Signed per-token contributions: entry (i, j) = sigma_i * x_j * V[j, i].
// Summed against the u columns this reproduces the dense layer output.
Matrix score_single_token(std::span<const double> x, const SvdResult& svd);

// Mean of absolute per-token scores, reduced over a fixed pairwise tree so
// the result is independent of how tokens are distributed across workers.
ScoreMatrix aggregate_scores(std::span<const std::vector<double>> tokens,
                             const SvdResult& svd, std::string layer_id = {},
                             unsigned num_workers = 1);

// Indices of the r components with the largest row mass, ascending.
std::vector<std::size_t> select_components(const ScoreMatrix& s, std::size_t r);

// CSV export: first row channel indices, first column component indices,
// 9 significant digits. With sort_axes, rows then columns are independently
// sorted ascending (the visualization convention).
void export_heatmap(const ScoreMatrix& s, const std::string& path, bool sort_axes);

// Reads a heatmap CSV written without sorting back into a ScoreMatrix.
ScoreMatrix read_score_csv(const std::string& path);

}  // namespace rsparse
