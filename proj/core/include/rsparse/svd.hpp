#pragma once

#include <vector>

#include "rsparse/matrix.hpp"

namespace rsparse {

// Compact SVD: w = u * diag(sigma) * vt with k = min(rows, cols) components.
// u is rows x k (orthonormal columns), vt is k x cols (orthonormal rows),
// sigma descending and non-negative.
struct SvdResult {
  Matrix u;
  std::vector<double> sigma;
  Matrix vt;

  std::size_t num_components() const { return sigma.size(); }

  // w reconstructed as u * diag(sigma) * vt
  Matrix reconstruct() const;
};

// One-sided Jacobi SVD. Deterministic cyclic sweeps, 60-sweep cap,
// 1e-12 relative off-diagonal tolerance. Sign convention: in each u column
// the entry of largest magnitude (first such entry on ties) is non-negative,
// with the paired vt row flipped to compensate.
// Throws numeric_error with the residual magnitude if the cap is hit.
SvdResult svd(const Matrix& w);

}  // namespace rsparse
