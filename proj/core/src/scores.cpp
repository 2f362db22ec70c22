#include "rsparse/scores.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <string>

#include "rsparse/errors.hpp"
#include "rsparse/report.hpp"
#include "rsparse/version.hpp"

namespace rsparse {

Matrix score_single_token(std::span<const double> x, const SvdResult& svd) {
  if (x.size() != svd.vt.cols()) {
    throw usage_error("score_single_token: input length " + std::to_string(x.size()) +
                      " does not match V rows " + std::to_string(svd.vt.cols()));
  }
  const std::size_t k = svd.num_components();
  Matrix s(k, x.size());
  for (std::size_t i = 0; i < k; ++i) {
    const double sig = svd.sigma[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      s(i, j) = sig * x[j] * svd.vt(i, j);  // V[j, i] == vt(i, j)
    }
  }
  return s;
}

namespace {

// Fixed pairwise reduction over [lo, hi): the tree shape depends only on the
// token count, so worker count never changes the result.
Matrix abs_score_sum(std::span<const std::vector<double>> tokens, const SvdResult& svd,
                     std::size_t lo, std::size_t hi, unsigned workers) {
  if (hi - lo == 1) {
    Matrix s = score_single_token(tokens[lo], svd);
    for (std::size_t i = 0; i < s.rows(); ++i)
      for (std::size_t j = 0; j < s.cols(); ++j) s(i, j) = std::fabs(s(i, j));
    return s;
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  Matrix left, right;
  if (workers > 1) {
    auto right_task = std::async(std::launch::async, [&] {
      return abs_score_sum(tokens, svd, mid, hi, workers / 2);
    });
    left = abs_score_sum(tokens, svd, lo, mid, workers - workers / 2);
    right = right_task.get();
  } else {
    left = abs_score_sum(tokens, svd, lo, mid, 1);
    right = abs_score_sum(tokens, svd, mid, hi, 1);
  }
  for (std::size_t i = 0; i < left.rows(); ++i)
    for (std::size_t j = 0; j < left.cols(); ++j) left(i, j) += right(i, j);
  return left;
}

}  // namespace

ScoreMatrix aggregate_scores(std::span<const std::vector<double>> tokens,
                             const SvdResult& svd, std::string layer_id,
                             unsigned num_workers) {
  if (tokens.empty()) throw usage_error("aggregate_scores requires at least one token");
  Matrix sum = abs_score_sum(tokens, svd, 0, tokens.size(), std::max(1u, num_workers));
  const double inv = 1.0 / static_cast<double>(tokens.size());
  for (std::size_t i = 0; i < sum.rows(); ++i)
    for (std::size_t j = 0; j < sum.cols(); ++j) sum(i, j) *= inv;
  return ScoreMatrix{std::move(sum), tokens.size(), std::move(layer_id)};
}

std::vector<std::size_t> select_components(const ScoreMatrix& s, std::size_t r) {
  if (r > s.values.rows()) {
    throw usage_error("select_components: r=" + std::to_string(r) +
                      " exceeds component count " + std::to_string(s.values.rows()));
  }
  std::vector<double> mass(s.values.rows(), 0.0);
  for (std::size_t i = 0; i < s.values.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < s.values.cols(); ++j) acc += s.values(i, j);
    mass[i] = acc;
  }
  return top_k_by_magnitude(mass, r);
}

void export_heatmap(const ScoreMatrix& s, const std::string& path, bool sort_axes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open heatmap file for writing: " + path);

  Matrix m = s.values;
  if (sort_axes) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
      double* row = m.data() + i * m.cols();
      std::sort(row, row + m.cols());
    }
    for (std::size_t j = 0; j < m.cols(); ++j) {
      std::vector<double> col(m.rows());
      for (std::size_t i = 0; i < m.rows(); ++i) col[i] = m(i, j);
      std::sort(col.begin(), col.end());
      for (std::size_t i = 0; i < m.rows(); ++i) m(i, j) = col[i];
    }
  }

  for (std::size_t j = 0; j < m.cols(); ++j) out << ',' << j;
  out << '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    out << i;
    for (std::size_t j = 0; j < m.cols(); ++j) out << ',' << format_sig9(m(i, j));
    out << '\n';
  }
  out << "# rsparse=" << kVersion << " layer=" << s.layer_id
      << " tokens=" << s.token_count << " sorted=" << (sort_axes ? 1 : 0) << '\n';
  if (!out) throw io_error("write failed: " + path);
}

ScoreMatrix read_score_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open score file: " + path);
  std::string line;
  std::vector<std::vector<double>> rows;
  std::size_t cols = 0;
  ScoreMatrix out;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      // provenance comment carries layer id and token count
      std::size_t pos = line.find(" layer=");
      if (pos != std::string::npos) {
        std::size_t end = line.find(' ', pos + 7);
        out.layer_id = line.substr(pos + 7, end - pos - 7);
      }
      pos = line.find(" tokens=");
      if (pos != std::string::npos) {
        out.token_count = std::stoull(line.substr(pos + 8));
      }
      continue;
    }
    auto fields = split_csv_line(line);
    if (!have_header) {
      cols = fields.size() - 1;
      have_header = true;
      continue;
    }
    if (fields.size() != cols + 1) throw io_error("ragged score CSV row in " + path);
    std::vector<double> row(cols);
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = std::stod(fields[j + 1]);
      if (!(row[j] >= 0.0)) throw io_error("negative score entry in " + path);
    }
    rows.push_back(std::move(row));
  }
  if (!have_header) throw io_error("score CSV has no header: " + path);
  Matrix m(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = rows[i][j];
  out.values = std::move(m);
  return out;
}

}  // namespace rsparse
