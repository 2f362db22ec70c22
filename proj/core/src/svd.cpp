#include "rsparse/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "rsparse/errors.hpp"

namespace rsparse {

namespace {

constexpr int kMaxSweeps = 60;
constexpr double kOffDiagTol = 1e-12;

// Orthogonalizes the n columns of the column-major m x n buffer `a` by plane
// rotations, accumulating them into the column-major n x n buffer `v`.
// Requires m >= n. Returns the worst relative off-diagonal seen in the final
// sweep (0 when fully converged).
double jacobi_orthogonalize(std::vector<double>& a, std::vector<double>& v,
                            std::size_t m, std::size_t n) {
  std::vector<double> col_sq(n, 0.0);
  double worst = 0.0;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    for (std::size_t j = 0; j < n; ++j) {
      const double* cj = a.data() + j * m;
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) s += cj[i] * cj[i];
      col_sq[j] = s;
    }
    bool rotated = false;
    worst = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = col_sq[p];
        const double beta = col_sq[q];
        if (alpha == 0.0 || beta == 0.0) continue;
        double* cp = a.data() + p * m;
        double* cq = a.data() + q * m;
        double gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) gamma += cp[i] * cq[i];
        const double rel = std::fabs(gamma) / std::sqrt(alpha * beta);
        worst = std::max(worst, rel);
        if (rel <= kOffDiagTol) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double ap = cp[i];
          const double aq = cq[i];
          cp[i] = c * ap - s * aq;
          cq[i] = s * ap + c * aq;
        }
        double* vp = v.data() + p * n;
        double* vq = v.data() + q * n;
        for (std::size_t i = 0; i < n; ++i) {
          const double wp = vp[i];
          const double wq = vq[i];
          vp[i] = c * wp - s * wq;
          vq[i] = s * wp + c * wq;
        }
        col_sq[p] = c * c * alpha - 2.0 * c * s * gamma + s * s * beta;
        col_sq[q] = s * s * alpha + 2.0 * c * s * gamma + c * c * beta;
      }
    }
    if (!rotated) return 0.0;
  }
  return worst;
}

// SVD of a tall (rows >= cols) matrix.
SvdResult svd_tall(const Matrix& w) {
  const std::size_t m = w.rows();
  const std::size_t n = w.cols();

  // column-major working copies
  std::vector<double> a(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) a[j * m + i] = w(i, j);
  std::vector<double> v(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) v[j * n + j] = 1.0;

  const double residual = jacobi_orthogonalize(a, v, m, n);
  if (residual > kOffDiagTol) {
    throw numeric_error("svd did not converge within " + std::to_string(kMaxSweeps) +
                        " sweeps; residual off-diagonal " + std::to_string(residual));
  }

  std::vector<double> sig(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += a[j * m + i] * a[j * m + i];
    sig[j] = std::sqrt(s);
  }

  // order components by descending singular value, stable on ties
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sig[x] > sig[y]; });

  SvdResult out;
  out.u = Matrix(m, n);
  out.vt = Matrix(n, n);
  out.sigma.resize(n);

  const double sig_max = n > 0 ? sig[order[0]] : 0.0;
  const double tiny = sig_max * 1e-14;
  std::size_t rank = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.sigma[j] = sig[src];
    for (std::size_t i = 0; i < n; ++i) out.vt(j, i) = v[src * n + i];
    if (sig[src] > tiny && sig[src] > 0.0) {
      const double inv = 1.0 / sig[src];
      for (std::size_t i = 0; i < m; ++i) out.u(i, j) = a[src * m + i] * inv;
      rank = j + 1;
    }
  }

  // complete u columns for (near-)zero singular values so u stays orthonormal
  std::vector<double> cand(m, 0.0);
  std::vector<double> best(m, 0.0);
  for (std::size_t j = rank; j < n; ++j) {
    if (out.sigma[j] > tiny && out.sigma[j] > 0.0) continue;
    // pick the unit basis vector farthest from the span of the columns so far
    double best_nrm = -1.0;
    for (std::size_t basis = 0; basis < m; ++basis) {
      std::fill(cand.begin(), cand.end(), 0.0);
      cand[basis] = 1.0;
      for (std::size_t prev = 0; prev < j; ++prev) {
        double dot = 0.0;
        for (std::size_t i = 0; i < m; ++i) dot += cand[i] * out.u(i, prev);
        for (std::size_t i = 0; i < m; ++i) cand[i] -= dot * out.u(i, prev);
      }
      const double nrm = vector_norm(cand);
      if (nrm > best_nrm) {
        best_nrm = nrm;
        best = cand;
      }
    }
    // second orthogonalization pass cleans up rounding from the first
    for (std::size_t prev = 0; prev < j; ++prev) {
      double dot = 0.0;
      for (std::size_t i = 0; i < m; ++i) dot += best[i] * out.u(i, prev);
      for (std::size_t i = 0; i < m; ++i) best[i] -= dot * out.u(i, prev);
    }
    const double nrm = vector_norm(best);
    for (std::size_t i = 0; i < m; ++i) out.u(i, j) = best[i] / nrm;
  }

  // sign convention: first entry of largest magnitude in each u column >= 0
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double mag = std::fabs(out.u(i, j));
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    if (out.u(arg, j) < 0.0) {
      for (std::size_t i = 0; i < m; ++i) out.u(i, j) = -out.u(i, j);
      for (std::size_t i = 0; i < n; ++i) out.vt(j, i) = -out.vt(j, i);
    }
  }
  return out;
}

}  // namespace

Matrix SvdResult::reconstruct() const {
  Matrix scaled = u;  // u * diag(sigma)
  for (std::size_t i = 0; i < scaled.rows(); ++i)
    for (std::size_t j = 0; j < scaled.cols(); ++j) scaled(i, j) *= sigma[j];
  return matmul(scaled, vt);
}

SvdResult svd(const Matrix& w) {
  w.check_finite();
  if (w.rows() >= w.cols()) return svd_tall(w);
  // wide case: decompose the transpose and swap factors
  SvdResult t = svd_tall(transpose(w));
  SvdResult out;
  out.sigma = std::move(t.sigma);
  out.u = transpose(t.vt);
  out.vt = transpose(t.u);
  // re-apply the sign convention in terms of the swapped u
  for (std::size_t j = 0; j < out.sigma.size(); ++j) {
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < out.u.rows(); ++i) {
      const double mag = std::fabs(out.u(i, j));
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    if (out.u(arg, j) < 0.0) {
      for (std::size_t i = 0; i < out.u.rows(); ++i) out.u(i, j) = -out.u(i, j);
      for (std::size_t i = 0; i < out.vt.cols(); ++i) out.vt(j, i) = -out.vt(j, i);
    }
  }
  return out;
}

}  // namespace rsparse
