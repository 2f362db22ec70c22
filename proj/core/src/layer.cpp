#include "rsparse/layer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

#include "rsparse/errors.hpp"
#include "rsparse/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace rsparse {

ColMajorMatrix ColMajorMatrix::from_row_major(const Matrix& w) {
  ColMajorMatrix m;
  m.rows = w.rows();
  m.cols = w.cols();
  m.data.resize(m.rows * m.cols);
  for (std::size_t j = 0; j < m.cols; ++j)
    for (std::size_t i = 0; i < m.rows; ++i) m.data[j * m.rows + i] = w(i, j);
  return m;
}

Matrix ColMajorMatrix::to_row_major() const {
  Matrix w(rows, cols);
  for (std::size_t j = 0; j < cols; ++j)
    for (std::size_t i = 0; i < rows; ++i) w(i, j) = data[j * rows + i];
  return w;
}

DecomposedLayer decompose_with_svd(const Matrix& w, const SparsityPlan& plan,
                                   const ScoreMatrix& score, const SvdResult& svd) {
  const std::size_t m_out = w.rows();
  const std::size_t m_in = w.cols();
  const std::size_t k = std::min(m_in, m_out);
  if (plan.rank > k) {
    throw usage_error("decompose: rank " + std::to_string(plan.rank) +
                      " exceeds min(m_in, m_out) = " + std::to_string(k));
  }
  if (score.values.rows() != k || score.values.cols() != m_in) {
    throw usage_error("decompose: score shape " + std::to_string(score.values.rows()) +
                      "x" + std::to_string(score.values.cols()) +
                      " does not match SVD of a " + std::to_string(m_out) + "x" +
                      std::to_string(m_in) + " weight");
  }

  DecomposedLayer layer;
  layer.m_in = m_in;
  layer.m_out = m_out;
  layer.w_cols = ColMajorMatrix::from_row_major(w);
  layer.plan = plan;
  layer.selected_components = select_components(score, plan.rank);

  const std::size_t r = plan.rank;
  layer.a_r = Matrix(m_out, r);
  layer.b_r = Matrix(r, m_in);
  for (std::size_t c = 0; c < r; ++c) {
    const std::size_t comp = layer.selected_components[c];
    const double root = std::sqrt(svd.sigma[comp]);
    for (std::size_t i = 0; i < m_out; ++i) layer.a_r(i, c) = svd.u(i, comp) * root;
    for (std::size_t j = 0; j < m_in; ++j) layer.b_r(c, j) = root * svd.vt(comp, j);
  }
  return layer;
}

DecomposedLayer decompose(const Matrix& w, const SparsityPlan& plan, const ScoreMatrix& score) {
  return decompose_with_svd(w, plan, score, svd(w));
}

std::vector<double> gather_matvec(const ColMajorMatrix& w_cols, std::span<const double> x,
                                  std::span<const std::size_t> kept,
                                  std::uint64_t* touched_bytes) {
  if (x.size() != w_cols.cols) {
    throw usage_error("gather_matvec: input length " + std::to_string(x.size()) +
                      " does not match column count " + std::to_string(w_cols.cols));
  }
  std::vector<double> y(w_cols.rows, 0.0);
  for (std::size_t j : kept) {
    if (j >= w_cols.cols) {
      throw usage_error("gather_matvec: kept index " + std::to_string(j) +
                        " out of range for " + std::to_string(w_cols.cols) + " columns");
    }
    const double xj = x[j];
    const double* col = w_cols.data.data() + j * w_cols.rows;
    for (std::size_t i = 0; i < w_cols.rows; ++i) y[i] += xj * col[i];
  }
  if (touched_bytes) *touched_bytes += kept.size() * w_cols.rows * kFileElementBytes;
  return y;
}

std::vector<double> forward(const DecomposedLayer& layer, std::span<const double> x) {
  if (x.size() != layer.m_in) {
    throw usage_error("forward: input length " + std::to_string(x.size()) +
                      " does not match m_in " + std::to_string(layer.m_in));
  }
  auto [sparse_x, kept] = threshold_sparsify(x, layer.plan.keep_fraction);
  std::vector<double> y = gather_matvec(layer.w_cols, sparse_x, kept);

  const std::size_t r = layer.plan.rank;
  if (r > 0) {
    // residual = x - sparse_x, routed through a_r * b_r
    std::vector<double> residual(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) residual[j] = x[j] - sparse_x[j];
    std::vector<double> mid(r, 0.0);
    for (std::size_t c = 0; c < r; ++c) {
      const double* row = layer.b_r.data() + c * layer.m_in;
      double acc = 0.0;
      for (std::size_t j = 0; j < layer.m_in; ++j) acc += row[j] * residual[j];
      mid[c] = acc;
    }
    for (std::size_t i = 0; i < layer.m_out; ++i) {
      const double* row = layer.a_r.data() + i * r;
      double acc = 0.0;
      for (std::size_t c = 0; c < r; ++c) acc += row[c] * mid[c];
      y[i] += acc;
    }
  }
  return y;
}

IoReport io_cost(const DecomposedLayer& layer) {
  const double m = static_cast<double>(layer.m_out);
  const double n = static_cast<double>(layer.m_in);
  const double r = static_cast<double>(layer.plan.rank);
  const std::size_t kept_cols = static_cast<std::size_t>(
      std::ceil(layer.plan.keep_fraction * static_cast<double>(layer.m_in)));

  IoReport rep;
  rep.dense_bytes = static_cast<std::uint64_t>(layer.m_in) * layer.m_out * kFileElementBytes;
  rep.touched_bytes =
      (static_cast<std::uint64_t>(kept_cols) * layer.m_out +
       static_cast<std::uint64_t>(layer.plan.rank) * (layer.m_in + layer.m_out)) *
      kFileElementBytes;
  rep.relative_cost = r * (m + n) / (m * n) + layer.plan.keep_fraction;
  return rep;
}

namespace {

inline void clobber_memory() { asm volatile("" ::: "memory"); }

// float32 column gather; the compiler turns the inner loop into packed FMAs,
// so both paths are limited by weight traffic, which is the point.
void gather_kernel_f32(const float* w, std::size_t rows, const float* x,
                       const std::uint32_t* idx, std::size_t nidx, float* y) {
  std::memset(y, 0, rows * sizeof(float));
  for (std::size_t t = 0; t < nidx; ++t) {
    const std::uint32_t j = idx[t];
    const float xj = x[j];
    const float* col = w + static_cast<std::size_t>(j) * rows;
    for (std::size_t i = 0; i < rows; ++i) y[i] += xj * col[i];
  }
}

}  // namespace

BenchReport bench_matvec(std::size_t m_in, std::size_t m_out, double keep_fraction,
                         std::size_t repetitions, std::uint64_t seed) {
  if (repetitions == 0) repetitions = 1;
  Rng rng(seed);
  std::vector<float> w(m_in * m_out);
  for (auto& v : w) v = static_cast<float>(rng.normal());
  std::vector<float> x(m_in);
  for (auto& v : x) v = static_cast<float>(rng.normal());

  std::vector<double> xd(x.begin(), x.end());
  const std::size_t k =
      static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(m_in)));
  auto kept = top_k_by_magnitude(xd, k);
  std::vector<std::uint32_t> kept32(kept.begin(), kept.end());
  std::vector<std::uint32_t> all(m_in);
  for (std::size_t j = 0; j < m_in; ++j) all[j] = static_cast<std::uint32_t>(j);

  std::vector<float> y(m_out);

  auto time_path = [&](const std::uint32_t* idx, std::size_t nidx) {
    // warmup
    for (int i = 0; i < 2; ++i) {
      gather_kernel_f32(w.data(), m_out, x.data(), idx, nidx, y.data());
      clobber_memory();
    }
    std::vector<double> samples(repetitions);
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      gather_kernel_f32(w.data(), m_out, x.data(), idx, nidx, y.data());
      clobber_memory();
      const auto t1 = std::chrono::steady_clock::now();
      samples[rep] =
          std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
    }
    std::sort(samples.begin(), samples.end());
    return samples[samples.size() / 2];
  };

  BenchReport rep;
  rep.m_in = m_in;
  rep.m_out = m_out;
  rep.keep_fraction = keep_fraction;
  rep.dense_ns_median = time_path(all.data(), all.size());
  rep.gather_ns_median = time_path(kept32.data(), kept32.size());
  rep.dense_bytes = static_cast<std::uint64_t>(m_in) * m_out * kFileElementBytes;
  rep.touched_bytes = static_cast<std::uint64_t>(k) * m_out * kFileElementBytes;
  rep.touched_ratio =
      static_cast<double>(rep.touched_bytes) / static_cast<double>(rep.dense_bytes);
  return rep;
}

namespace {

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw io_error("truncated file: " + path);
  return v;
}

void write_f32_block(std::ofstream& out, std::span<const double> values) {
  std::vector<float> buf(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) buf[i] = static_cast<float>(values[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

std::vector<double> read_f32_block(std::ifstream& in, std::size_t count,
                                   const std::string& path) {
  std::vector<float> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw io_error("truncated file: " + path);
  return std::vector<double>(buf.begin(), buf.end());
}

constexpr char kLayerMagic[4] = {'R', 'S', 'P', 'L'};
constexpr std::uint8_t kLayerVersion = 1;

}  // namespace

void write_decomposed_layer(const DecomposedLayer& layer, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open layer file for writing: " + path);
  out.write(kLayerMagic, 4);
  write_pod(out, kLayerVersion);
  write_pod(out, static_cast<std::uint32_t>(layer.m_in));
  write_pod(out, static_cast<std::uint32_t>(layer.m_out));
  write_pod(out, static_cast<std::uint32_t>(layer.plan.rank));
  const std::uint32_t kept_width = static_cast<std::uint32_t>(
      std::ceil(layer.plan.keep_fraction * static_cast<double>(layer.m_in)));
  write_pod(out, kept_width);
  write_f32_block(out, layer.w_cols.data);
  write_f32_block(out, layer.a_r.values());
  write_f32_block(out, layer.b_r.values());
  for (std::size_t c : layer.selected_components) {
    write_pod(out, static_cast<std::uint32_t>(c));
  }
  write_pod(out, layer.plan.keep_fraction);
  write_pod(out, static_cast<double>(layer.plan.rank));
  if (!out) throw io_error("write failed: " + path);
}

DecomposedLayer read_decomposed_layer(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open layer file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kLayerMagic, 4) != 0) {
    throw io_error("bad magic in " + path + " (expected RSPL)");
  }
  const auto version = read_pod<std::uint8_t>(in, path);
  if (version != kLayerVersion) {
    throw io_error("unsupported RSPL version " + std::to_string(version) + " in " + path);
  }
  DecomposedLayer layer;
  layer.m_in = read_pod<std::uint32_t>(in, path);
  layer.m_out = read_pod<std::uint32_t>(in, path);
  const std::uint32_t rank = read_pod<std::uint32_t>(in, path);
  read_pod<std::uint32_t>(in, path);  // kept width; derived from the plan below

  layer.w_cols.rows = layer.m_out;
  layer.w_cols.cols = layer.m_in;
  layer.w_cols.data = read_f32_block(in, layer.m_in * layer.m_out, path);
  layer.a_r = Matrix(layer.m_out, rank, read_f32_block(in, layer.m_out * rank, path));
  layer.b_r = Matrix(rank, layer.m_in, read_f32_block(in, rank * layer.m_in, path));
  layer.selected_components.resize(rank);
  for (std::uint32_t c = 0; c < rank; ++c) {
    layer.selected_components[c] = read_pod<std::uint32_t>(in, path);
  }
  layer.plan.keep_fraction = read_pod<double>(in, path);
  layer.plan.rank = static_cast<std::size_t>(read_pod<double>(in, path));
  if (layer.plan.rank != rank) throw io_error("inconsistent rank fields in " + path);
  return layer;
}

}  // namespace rsparse
