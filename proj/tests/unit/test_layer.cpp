#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "rsparse/errors.hpp"
#include "rsparse/layer.hpp"
#include "test_helpers.hpp"

using namespace rsparse;
using test::max_abs_diff;
using test::random_matrix;
using test::random_vector;
using test::rel_error;

namespace {

ScoreMatrix uniform_score(std::size_t components, std::size_t channels) {
  return ScoreMatrix{
      Matrix(components, channels, std::vector<double>(components * channels, 1.0)), 1, ""};
}

ScoreMatrix score_from_inputs(const Matrix& w, std::uint64_t seed, std::size_t tokens = 8) {
  const auto sv = svd(w);
  std::vector<std::vector<double>> toks;
  for (std::uint64_t t = 0; t < tokens; ++t)
    toks.push_back(random_vector(w.cols(), seed + t));
  return aggregate_scores(toks, sv);
}

// the two-term formula evaluated with dense matmuls only
std::vector<double> dense_two_term_oracle(const Matrix& w, const Matrix& a_r,
                                          const Matrix& b_r, std::span<const double> x,
                                          double s) {
  auto [xs, kept] = threshold_sparsify(x, s);
  auto ys = matvec(w, xs);
  std::vector<double> resid(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) resid[j] = x[j] - xs[j];
  const Matrix ab = matmul(a_r, b_r);
  const auto yr = matvec(ab, resid);
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] += yr[i];
  return ys;
}

}  // namespace

TEST_CASE("column-major storage round-trips the weight bit-exactly") {
  const Matrix w = random_matrix(9, 13, 61);
  const auto cm = ColMajorMatrix::from_row_major(w);
  CHECK(cm.to_row_major() == w);
}

TEST_CASE("decompose at full rank reconstructs the weight") {
  const Matrix w = random_matrix(12, 10, 62);
  const auto layer = decompose(w, SparsityPlan{0.3, 10}, uniform_score(10, 10));
  const Matrix rec = matmul(layer.a_r, layer.b_r);
  Matrix diff = rec;
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) diff(i, j) -= w(i, j);
  CHECK(frobenius_norm(diff) <= 1e-8 * frobenius_norm(w));
}

TEST_CASE("decompose at rank zero leaves empty factors") {
  const Matrix w = random_matrix(6, 8, 63);
  const auto layer = decompose(w, SparsityPlan{0.5, 0}, uniform_score(6, 8));
  CHECK(layer.a_r.cols() == 0);
  CHECK(layer.b_r.rows() == 0);
  CHECK(layer.selected_components.empty());
}

TEST_CASE("uniform scores reduce to plain truncated SVD") {
  const Matrix w = random_matrix(16, 16, 64);
  const auto layer = decompose(w, SparsityPlan{0.5, 4}, uniform_score(16, 16));
  CHECK(layer.selected_components == std::vector<std::size_t>{0, 1, 2, 3});

  const auto sv = svd(w);
  Matrix trunc(16, 16);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t j = 0; j < 16; ++j)
        trunc(i, j) += sv.sigma[c] * sv.u(i, c) * sv.vt(c, j);
  CHECK(max_abs_diff(matmul(layer.a_r, layer.b_r), trunc) < 1e-10);
}

TEST_CASE("decompose validates rank and score shape") {
  const Matrix w = random_matrix(4, 6, 65);
  CHECK_THROWS_AS(decompose(w, SparsityPlan{0.5, 5}, uniform_score(4, 6)), usage_error);
  CHECK_THROWS_AS(decompose(w, SparsityPlan{0.5, 2}, uniform_score(3, 6)), usage_error);
}

TEST_CASE("forward with s=1, r=0 is the dense layer") {
  const Matrix w = random_matrix(14, 11, 66);
  const auto layer = decompose(w, SparsityPlan{1.0, 0}, uniform_score(11, 11));
  const auto x = random_vector(11, 67);
  CHECK(rel_error(forward(layer, x), matvec(w, x)) < 1e-10);
}

TEST_CASE("forward with s=0, r=min is the dense layer through the factors") {
  const Matrix w = random_matrix(14, 11, 68);
  const auto layer = decompose(w, SparsityPlan{0.0, 11}, uniform_score(11, 11));
  const auto x = random_vector(11, 69);
  CHECK(rel_error(forward(layer, x), matvec(w, x)) < 1e-7);
}

TEST_CASE("forward matches the dense two-term oracle") {
  const Matrix w = random_matrix(64, 64, 70);
  const auto score = score_from_inputs(w, 71);
  const auto layer = decompose(w, SparsityPlan{0.5, 8}, score);
  for (std::uint64_t seed : {72, 73, 74}) {
    const auto x = random_vector(64, seed);
    const auto got = forward(layer, x);
    const auto want =
        dense_two_term_oracle(w, layer.a_r, layer.b_r, x, layer.plan.keep_fraction);
    CHECK(rel_error(got, want) < 1e-10);
  }
}

TEST_CASE("forward splits into independently computed Y_s and Y_r") {
  const Matrix w = random_matrix(20, 24, 75);
  const auto layer = decompose(w, SparsityPlan{0.25, 5}, score_from_inputs(w, 76));
  const auto x = random_vector(24, 77);

  auto [xs, kept] = threshold_sparsify(x, 0.25);
  const auto ys = gather_matvec(layer.w_cols, xs, kept);
  std::vector<double> resid(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) resid[j] = x[j] - xs[j];
  const auto yr = matvec(matmul(layer.a_r, layer.b_r), resid);

  const auto y = forward(layer, x);
  for (std::size_t i = 0; i < y.size(); ++i) {
    CHECK(y[i] == doctest::Approx(ys[i] + yr[i]).epsilon(1e-12).scale(1.0));
  }
}

TEST_CASE("degenerate plan s=0, r=0 yields the zero output") {
  const Matrix w = random_matrix(5, 7, 78);
  const auto layer = decompose(w, SparsityPlan{0.0, 0}, uniform_score(5, 7));
  const auto y = forward(layer, random_vector(7, 79));
  for (double v : y) CHECK(v == 0.0);
}

TEST_CASE("forward validates the input length") {
  const Matrix w = random_matrix(5, 7, 80);
  const auto layer = decompose(w, SparsityPlan{0.5, 0}, uniform_score(5, 7));
  CHECK_THROWS_AS(forward(layer, random_vector(6, 81)), usage_error);
}

TEST_CASE("gather_matvec over all columns equals the dense matvec") {
  const Matrix w = random_matrix(18, 25, 82);
  const auto cm = ColMajorMatrix::from_row_major(w);
  const auto x = random_vector(25, 83);
  std::vector<std::size_t> all(25);
  for (std::size_t j = 0; j < 25; ++j) all[j] = j;
  CHECK(max_abs_diff(gather_matvec(cm, x, all), matvec(w, x)) < 1e-12);
}

TEST_CASE("gather_matvec with an empty set is zero and counts no bytes") {
  const auto cm = ColMajorMatrix::from_row_major(random_matrix(4, 6, 84));
  std::uint64_t bytes = 0;
  const auto y = gather_matvec(cm, random_vector(6, 85), {}, &bytes);
  for (double v : y) CHECK(v == 0.0);
  CHECK(bytes == 0);
}

TEST_CASE("gather_matvec equals the masked dense oracle on random subsets") {
  Rng rng(86);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 3 + rng.uniform_index(30);
    const std::size_t cols = 3 + rng.uniform_index(30);
    const Matrix w = random_matrix(rows, cols, 870 + trial);
    const auto cm = ColMajorMatrix::from_row_major(w);
    const auto x = random_vector(cols, 900 + trial);

    std::vector<std::size_t> kept;
    std::vector<double> masked(cols, 0.0);
    for (std::size_t j = 0; j < cols; ++j) {
      if (rng.uniform01() < 0.3) {
        kept.push_back(j);
        masked[j] = x[j];
      }
    }
    CHECK(max_abs_diff(gather_matvec(cm, x, kept), matvec(w, masked)) < 1e-12);
  }
}

TEST_CASE("gather_matvec rejects out-of-range indices") {
  const auto cm = ColMajorMatrix::from_row_major(random_matrix(4, 6, 88));
  const std::vector<std::size_t> bad{6};
  CHECK_THROWS_AS(gather_matvec(cm, random_vector(6, 89), bad), usage_error);
}

TEST_CASE("io_cost evaluates the paper formula exactly") {
  auto make = [](std::size_t n, std::size_t m, double s, std::size_t r) {
    DecomposedLayer layer;
    layer.m_in = n;
    layer.m_out = m;
    layer.plan = {s, r};
    return layer;
  };
  CHECK(io_cost(make(4096, 4096, 0.3, 1024)).relative_cost == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(io_cost(make(4096, 4096, 0.5, 0)).relative_cost == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(io_cost(make(4096, 4096, 1.0, 0)).relative_cost == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("io_cost byte counts track the analytic ratio") {
  const Matrix w = random_matrix(64, 96, 90);
  const auto layer = decompose(w, SparsityPlan{0.37, 12}, uniform_score(64, 96));
  const auto rep = io_cost(layer);
  CHECK(rep.dense_bytes == 64 * 96 * 4);
  const double measured =
      static_cast<double>(rep.touched_bytes) / static_cast<double>(rep.dense_bytes);
  // ceil(s*n) rounds at most one column up
  CHECK(std::fabs(measured - rep.relative_cost) <= 1.0 / 96.0 + 1e-12);
}

TEST_CASE("forward error shrinks as s grows at fixed r") {
  const Matrix w = random_matrix(48, 48, 91);
  const auto score = score_from_inputs(w, 92);
  const auto sv = svd(w);
  std::vector<std::vector<double>> inputs;
  for (std::uint64_t t = 0; t < 128; ++t) inputs.push_back(random_vector(48, 1000 + t));

  double prev = 1e300;
  for (double s : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const auto layer = decompose_with_svd(w, SparsityPlan{s, 4}, score, sv);
    double err = 0.0;
    for (const auto& x : inputs) err += rel_error(forward(layer, x), matvec(w, x));
    err /= static_cast<double>(inputs.size());
    CHECK(err <= prev + 1e-12);
    prev = err;
  }
}

TEST_CASE("forward error shrinks as r grows at fixed s") {
  const Matrix w = random_matrix(48, 48, 93);
  const auto score = score_from_inputs(w, 94);
  const auto sv = svd(w);
  std::vector<std::vector<double>> inputs;
  for (std::uint64_t t = 0; t < 128; ++t) inputs.push_back(random_vector(48, 2000 + t));

  double prev = 1e300;
  for (std::size_t r : {0u, 4u, 12u, 24u, 48u}) {
    const auto layer = decompose_with_svd(w, SparsityPlan{0.3, r}, score, sv);
    double err = 0.0;
    for (const auto& x : inputs) err += rel_error(forward(layer, x), matvec(w, x));
    err /= static_cast<double>(inputs.size());
    CHECK(err <= prev + 1e-12);
    prev = err;
  }
}

TEST_CASE("planted structure: sparse+low-rank beats pure sparse at equal budget") {
  // rank-4 weight, inputs with 6 dominant channels carrying ~99.9% of energy
  const std::size_t n = 64, r0 = 4, k0 = 6;
  Rng rng(95);
  Matrix w(n, n);
  {
    const Matrix a = random_matrix(n, r0, 96);
    const Matrix b = random_matrix(r0, n, 97);
    w = matmul(a, b);
  }
  const auto sv = svd(w);
  const auto score = uniform_score(n, n);

  const double s = static_cast<double>(k0) / static_cast<double>(n);
  const auto rsparse_layer = decompose_with_svd(w, SparsityPlan{s, r0}, score, sv);
  const double budget = io_cost(rsparse_layer).relative_cost;
  const auto sparse_layer = decompose_with_svd(w, SparsityPlan{budget, 0}, score, sv);

  double err_rsparse = 0.0, err_sparse = 0.0;
  for (int t = 0; t < 32; ++t) {
    std::vector<double> x(n);
    for (auto& v : x) v = 0.02 * rng.normal();  // weak tail on every channel
    for (std::size_t d = 0; d < k0; ++d) x[(7 * d + 3) % n] += 3.0 * rng.normal();
    const auto want = matvec(w, x);
    err_rsparse += rel_error(forward(rsparse_layer, x), want);
    err_sparse += rel_error(forward(sparse_layer, x), want);
  }
  err_rsparse /= 32.0;
  err_sparse /= 32.0;
  CHECK(err_rsparse < 1e-3);
  CHECK(err_sparse >= 10.0 * err_rsparse);
}

TEST_CASE("RSPL files round-trip after one quantization pass") {
  const Matrix w = random_matrix(10, 14, 98);
  const auto layer = decompose(w, SparsityPlan{0.4, 3}, score_from_inputs(w, 99));
  const auto path = std::filesystem::temp_directory_path() / "rsparse_layer_rt.rspl";

  write_decomposed_layer(layer, path.string());
  const auto once = read_decomposed_layer(path.string());
  CHECK(once.m_in == layer.m_in);
  CHECK(once.m_out == layer.m_out);
  CHECK(once.selected_components == layer.selected_components);
  CHECK(once.plan.keep_fraction == layer.plan.keep_fraction);

  // values are float32 on disk; after one pass the representation is stable
  write_decomposed_layer(once, path.string());
  const auto twice = read_decomposed_layer(path.string());
  CHECK(twice == once);
  std::filesystem::remove(path);
}

TEST_CASE("RSPL reader rejects foreign files") {
  const auto path = std::filesystem::temp_directory_path() / "rsparse_bad.rspl";
  std::ofstream(path) << "not a layer file";
  CHECK_THROWS_WITH_AS(read_decomposed_layer(path.string()), doctest::Contains("bad magic"),
                       io_error);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_decomposed_layer("/nonexistent/file.rspl"), io_error);
}

TEST_CASE("bench_matvec reports coherent byte accounting at desk scale") {
  const auto rep = bench_matvec(256, 256, 0.5, 5, 7);
  CHECK(rep.dense_bytes == 256 * 256 * 4);
  CHECK(rep.touched_bytes == 128 * 256 * 4);
  CHECK(rep.touched_ratio == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rep.dense_ns_median > 0.0);
  CHECK(rep.gather_ns_median > 0.0);
}
