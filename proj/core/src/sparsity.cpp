#include "rsparse/sparsity.hpp"

#include <cmath>
#include <string>

#include "rsparse/errors.hpp"
#include "rsparse/svd.hpp"

namespace rsparse {

PhaseThresholds::PhaseThresholds(std::vector<double> t) : thresholds(std::move(t)) {
  if (thresholds.empty()) throw usage_error("phase thresholds require at least one level");
  for (std::size_t i = 0; i + 1 < thresholds.size(); ++i) {
    if (!(thresholds[i] > thresholds[i + 1])) {
      throw usage_error("phase thresholds must be strictly descending");
    }
  }
}

std::pair<std::vector<double>, std::vector<std::size_t>> threshold_sparsify(
    std::span<const double> x, double keep_fraction) {
  if (!(keep_fraction >= 0.0 && keep_fraction <= 1.0)) {
    throw usage_error("keep_fraction must lie in [0, 1], got " +
                      std::to_string(keep_fraction));
  }
  const std::size_t k =
      static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(x.size())));
  auto kept = top_k_by_magnitude(x, k);
  std::vector<double> sparse(x.size(), 0.0);
  for (std::size_t idx : kept) sparse[idx] = x[idx];
  return {std::move(sparse), std::move(kept)};
}

namespace {

// Bin index for a sub-threshold value; values below the ladder clamp into the
// lowest bin. Only valid for l >= 2.
std::size_t bin_of(double v, const std::vector<double>& t) {
  for (std::size_t i = 0; i + 1 < t.size(); ++i) {
    if (v >= t[i + 1]) return i;
  }
  return t.size() - 2;
}

}  // namespace

std::vector<double> multiphase_relu(std::span<const double> x, const PhaseThresholds& t) {
  std::vector<double> out(x.size());
  const auto& th = t.thresholds;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    if (v >= th[0]) {
      out[i] = v;
    } else if (t.levels() == 1) {
      out[i] = 0.0;
    } else {
      const std::size_t b = bin_of(v, th);
      out[i] = 0.5 * (th[b] + th[b + 1]);
    }
  }
  return out;
}

BiasDecomposition residual_bias_decompose(std::span<const double> h, const Matrix& w_down,
                                          const PhaseThresholds& t) {
  if (h.size() != w_down.cols()) {
    throw usage_error("residual_bias_decompose: input length " + std::to_string(h.size()) +
                      " does not match weight columns " + std::to_string(w_down.cols()));
  }
  const auto& th = t.thresholds;
  const std::size_t bins = t.num_bins();

  BiasDecomposition d;
  d.sparse_mask.assign(h.size(), false);
  d.bin_assignment.assign(h.size(), -1);
  d.biases.assign(bins, std::vector<double>(w_down.rows(), 0.0));

  std::vector<double> midpoint(bins);
  for (std::size_t b = 0; b < bins; ++b) midpoint[b] = 0.5 * (th[b] + th[b + 1]);

  for (std::size_t k = 0; k < h.size(); ++k) {
    if (h[k] >= th[0]) {
      d.sparse_mask[k] = true;
      continue;
    }
    if (bins == 0) continue;  // single level: channel masked to zero
    const std::size_t b = bin_of(h[k], th);
    d.bin_assignment[k] = static_cast<int>(b);
    for (std::size_t i = 0; i < w_down.rows(); ++i) {
      d.biases[b][i] += midpoint[b] * w_down(i, k);
    }
  }
  return d;
}

double stable_rank(const Matrix& m) {
  const double fro = frobenius_norm(m);
  if (fro == 0.0) throw usage_error("stable_rank is undefined for the zero matrix");
  const SvdResult s = svd(m);
  const double smax = s.sigma.empty() ? 0.0 : s.sigma[0];
  return (fro * fro) / (smax * smax);
}

Matrix bias_matrix(std::span<const BiasDecomposition> tokens) {
  if (tokens.empty()) throw usage_error("bias_matrix requires at least one token");
  const std::size_t dim = tokens[0].output_dim();
  for (const auto& tok : tokens) {
    if (tok.biases.size() != 2) {
      throw usage_error("bias_matrix requires exactly two bin biases per token, got " +
                        std::to_string(tok.biases.size()));
    }
    if (tok.output_dim() != dim) {
      throw usage_error("bias_matrix: inconsistent output dimensions across tokens");
    }
  }
  Matrix m(dim, 2 * tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (std::size_t r = 0; r < dim; ++r) {
      m(r, 2 * i) = tokens[i].biases[0][r];
      m(r, 2 * i + 1) = tokens[i].biases[1][r];
    }
  }
  return m;
}

}  // namespace rsparse
