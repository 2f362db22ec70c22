#include "rsparse/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "rsparse/errors.hpp"
#include "rsparse/rng.hpp"

namespace rsparse {

void ModelConfig::validate() const {
  if (num_layers == 0) throw usage_error("model needs at least one block");
  if (num_heads == 0 || embed_dim % num_heads != 0) {
    throw usage_error("embed_dim must be divisible by num_heads");
  }
  if (hidden_dim <= embed_dim) {
    throw usage_error("hidden_dim must exceed embed_dim (gated MLP expansion)");
  }
  if (vocab_size < 2) throw usage_error("vocab_size must be at least 2");
  if (max_seq == 0) throw usage_error("max_seq must be positive");
}

const char* linear_slot_name(LinearSlot slot) {
  switch (slot) {
    case LinearSlot::Q: return "wq";
    case LinearSlot::K: return "wk";
    case LinearSlot::V: return "wv";
    case LinearSlot::O: return "wo";
    case LinearSlot::Up: return "wup";
    case LinearSlot::Gate: return "wgate";
    case LinearSlot::Down: return "wdown";
  }
  return "?";
}

const Matrix& ToyModel::linear_weight(std::size_t linear_index) const {
  const BlockWeights& b = blocks.at(linear_index / kLinearsPerBlock);
  switch (static_cast<LinearSlot>(linear_index % kLinearsPerBlock)) {
    case LinearSlot::Q: return b.w_q;
    case LinearSlot::K: return b.w_k;
    case LinearSlot::V: return b.w_v;
    case LinearSlot::O: return b.w_o;
    case LinearSlot::Up: return b.w_up;
    case LinearSlot::Gate: return b.w_gate;
    case LinearSlot::Down: return b.w_down;
  }
  throw usage_error("bad linear index");
}

std::string ToyModel::linear_name(std::size_t linear_index) const {
  const std::size_t block = linear_index / kLinearsPerBlock;
  const auto slot = static_cast<LinearSlot>(linear_index % kLinearsPerBlock);
  return "b" + std::to_string(block) + "." + linear_slot_name(slot);
}

namespace {

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double sigma, Rng& rng) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, sigma);
  return m;
}

constexpr double kRmsEps = 1e-6;
constexpr double kInitSigma = 0.02;

double silu(double z) { return z / (1.0 + std::exp(-z)); }

double silu_derivative(double z) {
  const double s = 1.0 / (1.0 + std::exp(-z));
  return s * (1.0 + z * (1.0 - s));
}

// y_i = g_i * x_i / rms(x); returns rms for the backward pass
double rms_normalize(std::span<const double> x, std::span<const double> gain,
                     std::span<double> y) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double rms = std::sqrt(ss / static_cast<double>(x.size()) + kRmsEps);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gain[i] * x[i] / rms;
  return rms;
}

}  // namespace

ToyModel init_model(const ModelConfig& config) {
  config.validate();
  ToyModel m;
  m.config = config;
  Rng rng(derive_seed(config.seed, "model.init"));
  const std::size_t n = config.embed_dim;
  const std::size_t h = config.hidden_dim;
  m.token_embedding = gaussian_matrix(config.vocab_size, n, kInitSigma, rng);
  m.position_embedding = gaussian_matrix(config.max_seq, n, kInitSigma, rng);
  m.blocks.resize(config.num_layers);
  for (auto& b : m.blocks) {
    b.w_q = gaussian_matrix(n, n, kInitSigma, rng);
    b.w_k = gaussian_matrix(n, n, kInitSigma, rng);
    b.w_v = gaussian_matrix(n, n, kInitSigma, rng);
    b.w_o = gaussian_matrix(n, n, kInitSigma, rng);
    b.w_up = gaussian_matrix(h, n, kInitSigma, rng);
    b.w_gate = gaussian_matrix(h, n, kInitSigma, rng);
    b.w_down = gaussian_matrix(n, h, kInitSigma, rng);
    b.ln1_gain.assign(n, 1.0);
    b.ln2_gain.assign(n, 1.0);
  }
  m.final_gain.assign(n, 1.0);
  m.head = gaussian_matrix(config.vocab_size, n, kInitSigma, rng);
  return m;
}

std::vector<double> mlp_forward(std::span<const double> x, const BlockWeights& b,
                                const DecomposedLayer* up, const DecomposedLayer* gate,
                                const DecomposedLayer* down) {
  if (x.size() != b.w_up.cols()) {
    throw usage_error("mlp_forward: input length " + std::to_string(x.size()) +
                      " does not match embed dim " + std::to_string(b.w_up.cols()));
  }
  std::vector<double> up_h = up ? forward(*up, x) : matvec(b.w_up, x);
  std::vector<double> gate_h = gate ? forward(*gate, x) : matvec(b.w_gate, x);
  std::vector<double> hidden(up_h.size());
  for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] = up_h[i] * silu(gate_h[i]);
  return down ? forward(*down, hidden) : matvec(b.w_down, hidden);
}

namespace {

// Dispatches one linear either densely or through its decomposed form,
// depending on whether this position is in the decode region.
std::vector<double> apply_linear(const ToyModel& model, const DecomposedModel* dm,
                                 std::size_t block, LinearSlot slot, std::size_t position,
                                 std::size_t decode_start, std::span<const double> u) {
  const std::size_t idx = block * kLinearsPerBlock + static_cast<std::size_t>(slot);
  if (dm != nullptr && position >= decode_start) {
    return forward(dm->layers.at(idx), u);
  }
  return matvec(model.linear_weight(idx), u);
}

void check_tokens(const ToyModel& model, std::span<const int> tokens) {
  if (tokens.empty()) throw usage_error("token sequence is empty");
  if (tokens.size() > model.config.max_seq) {
    throw usage_error("sequence length " + std::to_string(tokens.size()) +
                      " exceeds max_seq " + std::to_string(model.config.max_seq));
  }
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= model.config.vocab_size) {
      throw usage_error("token id " + std::to_string(t) + " outside vocabulary of " +
                        std::to_string(model.config.vocab_size));
    }
  }
}

}  // namespace

Matrix model_forward(const ToyModel& model, std::span<const int> tokens,
                     const DecomposedModel* decomposed, std::size_t decode_start) {
  check_tokens(model, tokens);
  if (decomposed != nullptr &&
      decomposed->layers.size() != model.num_linear_layers()) {
    throw usage_error("decomposed model has " + std::to_string(decomposed->layers.size()) +
                      " layers, model needs " + std::to_string(model.num_linear_layers()));
  }
  const std::size_t T = tokens.size();
  const std::size_t n = model.config.embed_dim;
  const std::size_t heads = model.config.num_heads;
  const std::size_t hd = n / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<std::vector<double>> x(T, std::vector<double>(n));
  for (std::size_t p = 0; p < T; ++p) {
    const auto tok = static_cast<std::size_t>(tokens[p]);
    for (std::size_t i = 0; i < n; ++i) {
      x[p][i] = model.token_embedding(tok, i) + model.position_embedding(p, i);
    }
  }

  std::vector<double> u(n);
  for (std::size_t blk = 0; blk < model.blocks.size(); ++blk) {
    const BlockWeights& b = model.blocks[blk];

    std::vector<std::vector<double>> q(T), k(T), v(T);
    for (std::size_t p = 0; p < T; ++p) {
      rms_normalize(x[p], b.ln1_gain, u);
      q[p] = apply_linear(model, decomposed, blk, LinearSlot::Q, p, decode_start, u);
      k[p] = apply_linear(model, decomposed, blk, LinearSlot::K, p, decode_start, u);
      v[p] = apply_linear(model, decomposed, blk, LinearSlot::V, p, decode_start, u);
    }

    for (std::size_t p = 0; p < T; ++p) {
      std::vector<double> ctx(n, 0.0);
      std::vector<double> w(p + 1);
      for (std::size_t head = 0; head < heads; ++head) {
        const std::size_t off = head * hd;
        double mx = -1e300;
        for (std::size_t j = 0; j <= p; ++j) {
          double dot = 0.0;
          for (std::size_t d = 0; d < hd; ++d) dot += q[p][off + d] * k[j][off + d];
          w[j] = dot * scale;
          mx = std::max(mx, w[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j <= p; ++j) {
          w[j] = std::exp(w[j] - mx);
          sum += w[j];
        }
        for (std::size_t j = 0; j <= p; ++j) {
          const double wj = w[j] / sum;
          for (std::size_t d = 0; d < hd; ++d) ctx[off + d] += wj * v[j][off + d];
        }
      }
      auto att = apply_linear(model, decomposed, blk, LinearSlot::O, p, decode_start, ctx);
      for (std::size_t i = 0; i < n; ++i) x[p][i] += att[i];
    }

    for (std::size_t p = 0; p < T; ++p) {
      rms_normalize(x[p], b.ln2_gain, u);
      const std::size_t base = blk * kLinearsPerBlock;
      const DecomposedLayer* up = nullptr;
      const DecomposedLayer* gate = nullptr;
      const DecomposedLayer* down = nullptr;
      if (decomposed != nullptr && p >= decode_start) {
        up = &decomposed->layers[base + static_cast<std::size_t>(LinearSlot::Up)];
        gate = &decomposed->layers[base + static_cast<std::size_t>(LinearSlot::Gate)];
        down = &decomposed->layers[base + static_cast<std::size_t>(LinearSlot::Down)];
      }
      auto out = mlp_forward(u, b, up, gate, down);
      for (std::size_t i = 0; i < n; ++i) x[p][i] += out[i];
    }
  }

  Matrix logits(T, model.config.vocab_size);
  for (std::size_t p = 0; p < T; ++p) {
    rms_normalize(x[p], model.final_gain, u);
    auto row = matvec(model.head, u);
    for (std::size_t c = 0; c < row.size(); ++c) logits(p, c) = row[c];
  }
  return logits;
}

double perplexity(const ToyModel& model, std::span<const int> tokens,
                  std::size_t split_point, const DecomposedModel* decomposed) {
  if (split_point >= tokens.size()) {
    throw usage_error("split_point " + std::to_string(split_point) +
                      " must lie before the sequence end " + std::to_string(tokens.size()));
  }
  const std::size_t first_target = split_point + 1;
  if (first_target >= tokens.size()) {
    throw usage_error("no scored positions beyond split_point " +
                      std::to_string(split_point));
  }
  const Matrix logits = model_forward(model, tokens, decomposed, split_point);
  double nll = 0.0;
  std::size_t count = 0;
  for (std::size_t t = first_target; t < tokens.size(); ++t) {
    const auto row = logits.row(t - 1);
    double mx = row[0];
    for (double vv : row) mx = std::max(mx, vv);
    double sum = 0.0;
    for (double vv : row) sum += std::exp(vv - mx);
    const double logp = row[static_cast<std::size_t>(tokens[t])] - mx - std::log(sum);
    nll -= logp;
    ++count;
  }
  return std::exp(nll / static_cast<double>(count));
}

void collect_linear_inputs(const ToyModel& model, std::span<const int> tokens,
                           std::vector<std::vector<std::vector<double>>>& out) {
  check_tokens(model, tokens);
  out.assign(model.num_linear_layers(), {});
  const std::size_t T = tokens.size();
  const std::size_t n = model.config.embed_dim;
  const std::size_t heads = model.config.num_heads;
  const std::size_t hd = n / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<std::vector<double>> x(T, std::vector<double>(n));
  for (std::size_t p = 0; p < T; ++p) {
    const auto tok = static_cast<std::size_t>(tokens[p]);
    for (std::size_t i = 0; i < n; ++i) {
      x[p][i] = model.token_embedding(tok, i) + model.position_embedding(p, i);
    }
  }

  std::vector<double> u(n);
  for (std::size_t blk = 0; blk < model.blocks.size(); ++blk) {
    const BlockWeights& b = model.blocks[blk];
    const std::size_t base = blk * kLinearsPerBlock;

    std::vector<std::vector<double>> q(T), k(T), v(T);
    for (std::size_t p = 0; p < T; ++p) {
      rms_normalize(x[p], b.ln1_gain, u);
      std::vector<double> uc(u.begin(), u.end());
      out[base + 0].push_back(uc);
      out[base + 1].push_back(uc);
      out[base + 2].push_back(std::move(uc));
      q[p] = matvec(b.w_q, u);
      k[p] = matvec(b.w_k, u);
      v[p] = matvec(b.w_v, u);
    }

    for (std::size_t p = 0; p < T; ++p) {
      std::vector<double> ctx(n, 0.0);
      std::vector<double> w(p + 1);
      for (std::size_t head = 0; head < heads; ++head) {
        const std::size_t off = head * hd;
        double mx = -1e300;
        for (std::size_t j = 0; j <= p; ++j) {
          double dot = 0.0;
          for (std::size_t d = 0; d < hd; ++d) dot += q[p][off + d] * k[j][off + d];
          w[j] = dot * scale;
          mx = std::max(mx, w[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j <= p; ++j) {
          w[j] = std::exp(w[j] - mx);
          sum += w[j];
        }
        for (std::size_t j = 0; j <= p; ++j) {
          const double wj = w[j] / sum;
          for (std::size_t d = 0; d < hd; ++d) ctx[off + d] += wj * v[j][off + d];
        }
      }
      out[base + 3].push_back(ctx);
      auto att = matvec(b.w_o, ctx);
      for (std::size_t i = 0; i < n; ++i) x[p][i] += att[i];
    }

    for (std::size_t p = 0; p < T; ++p) {
      rms_normalize(x[p], b.ln2_gain, u);
      std::vector<double> uc(u.begin(), u.end());
      out[base + 4].push_back(uc);
      out[base + 5].push_back(std::move(uc));
      auto up_h = matvec(b.w_up, u);
      auto gate_h = matvec(b.w_gate, u);
      std::vector<double> hidden(up_h.size());
      for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] = up_h[i] * silu(gate_h[i]);
      out[base + 6].push_back(hidden);
      auto down = matvec(b.w_down, hidden);
      for (std::size_t i = 0; i < n; ++i) x[p][i] += down[i];
    }
  }
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

namespace {

struct ParamView {
  double* data;
  std::size_t size;
};

void collect_params(ToyModel& m, std::vector<ParamView>& out) {
  auto add_matrix = [&](Matrix& mat) { out.push_back({mat.data(), mat.size()}); };
  auto add_vector = [&](std::vector<double>& v) { out.push_back({v.data(), v.size()}); };
  add_matrix(m.token_embedding);
  add_matrix(m.position_embedding);
  for (auto& b : m.blocks) {
    add_matrix(b.w_q);
    add_matrix(b.w_k);
    add_matrix(b.w_v);
    add_matrix(b.w_o);
    add_matrix(b.w_up);
    add_matrix(b.w_gate);
    add_matrix(b.w_down);
    add_vector(b.ln1_gain);
    add_vector(b.ln2_gain);
  }
  add_vector(m.final_gain);
  add_matrix(m.head);
}

ToyModel zeros_like(const ToyModel& m) {
  ToyModel z;
  z.config = m.config;
  z.token_embedding = Matrix(m.token_embedding.rows(), m.token_embedding.cols());
  z.position_embedding = Matrix(m.position_embedding.rows(), m.position_embedding.cols());
  z.blocks.resize(m.blocks.size());
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    const auto& b = m.blocks[i];
    auto& g = z.blocks[i];
    g.w_q = Matrix(b.w_q.rows(), b.w_q.cols());
    g.w_k = Matrix(b.w_k.rows(), b.w_k.cols());
    g.w_v = Matrix(b.w_v.rows(), b.w_v.cols());
    g.w_o = Matrix(b.w_o.rows(), b.w_o.cols());
    g.w_up = Matrix(b.w_up.rows(), b.w_up.cols());
    g.w_gate = Matrix(b.w_gate.rows(), b.w_gate.cols());
    g.w_down = Matrix(b.w_down.rows(), b.w_down.cols());
    g.ln1_gain.assign(b.ln1_gain.size(), 0.0);
    g.ln2_gain.assign(b.ln2_gain.size(), 0.0);
  }
  z.final_gain.assign(m.final_gain.size(), 0.0);
  z.head = Matrix(m.head.rows(), m.head.cols());
  return z;
}

// dW += dy^T * u for row batches: y[t] = W u[t]
void accumulate_linear_grads(const std::vector<std::vector<double>>& dy,
                             const std::vector<std::vector<double>>& u, Matrix& dw) {
  for (std::size_t t = 0; t < dy.size(); ++t) {
    for (std::size_t i = 0; i < dw.rows(); ++i) {
      const double d = dy[t][i];
      if (d == 0.0) continue;
      double* row = dw.data() + i * dw.cols();
      const auto& ut = u[t];
      for (std::size_t j = 0; j < dw.cols(); ++j) row[j] += d * ut[j];
    }
  }
}

// du[t] = W^T dy[t]
void backprop_linear_input(const Matrix& w, const std::vector<std::vector<double>>& dy,
                           std::vector<std::vector<double>>& du, bool accumulate) {
  for (std::size_t t = 0; t < dy.size(); ++t) {
    if (!accumulate) du[t].assign(w.cols(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
      const double d = dy[t][i];
      if (d == 0.0) continue;
      const double* row = w.data() + i * w.cols();
      for (std::size_t j = 0; j < w.cols(); ++j) du[t][j] += d * row[j];
    }
  }
}

// backward through y_i = g_i x_i / rms(x): given dy, produces dx (accumulated
// into dst) and dgain
void rms_backward(std::span<const double> x, std::span<const double> gain, double rms,
                  std::span<const double> dy, std::span<double> dx_accum,
                  std::span<double> dgain) {
  const std::size_t n = x.size();
  double dot = 0.0;  // sum_j dy_j g_j x_j
  for (std::size_t j = 0; j < n; ++j) dot += dy[j] * gain[j] * x[j];
  const double inv_rms = 1.0 / rms;
  const double factor = dot / (static_cast<double>(n) * rms * rms * rms);
  for (std::size_t i = 0; i < n; ++i) {
    dx_accum[i] += dy[i] * gain[i] * inv_rms - x[i] * factor;
    dgain[i] += dy[i] * x[i] * inv_rms;
  }
}

struct BlockCache {
  std::vector<std::vector<double>> x_in;    // T x n, block input
  std::vector<double> rms1;                 // T
  std::vector<std::vector<double>> u1;      // T x n
  std::vector<std::vector<double>> q, k, v; // T x n
  std::vector<std::vector<std::vector<double>>> attw;  // head -> p -> weights[0..p]
  std::vector<std::vector<double>> ctx;     // T x n
  std::vector<std::vector<double>> x_mid;   // T x n
  std::vector<double> rms2;                 // T
  std::vector<std::vector<double>> u2;      // T x n
  std::vector<std::vector<double>> up_h, gate_h, hidden;  // T x m
};

}  // namespace

double train_model(ToyModel& model, std::span<const int> corpus, const TrainConfig& cfg) {
  model.config.validate();
  if (corpus.size() < cfg.seq_len + 2) {
    throw usage_error("corpus too short for training windows of length " +
                      std::to_string(cfg.seq_len));
  }
  if (cfg.seq_len + 1 > model.config.max_seq) {
    throw usage_error("training seq_len exceeds the position table");
  }

  std::vector<ParamView> params;
  collect_params(model, params);
  ToyModel grads = zeros_like(model);
  std::vector<ParamView> gviews;
  collect_params(grads, gviews);

  std::size_t total = 0;
  for (const auto& p : params) total += p.size;
  std::vector<double> adam_m(total, 0.0), adam_v(total, 0.0);

  const std::size_t n = model.config.embed_dim;
  const std::size_t mdim = model.config.hidden_dim;
  const std::size_t heads = model.config.num_heads;
  const std::size_t hd = n / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t V = model.config.vocab_size;

  Rng rng(derive_seed(cfg.seed, "train.batches"));
  double last_loss = 0.0;

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    for (auto& g : gviews) std::fill(g.data, g.data + g.size, 0.0);
    double loss_acc = 0.0;

    for (std::size_t bseq = 0; bseq < cfg.batch_sequences; ++bseq) {
      const std::size_t start = rng.uniform_index(corpus.size() - cfg.seq_len - 1);
      std::span<const int> window = corpus.subspan(start, cfg.seq_len + 1);
      const std::size_t T = cfg.seq_len;

      // ---- forward with caches ----
      std::vector<std::vector<double>> x(T, std::vector<double>(n));
      for (std::size_t p = 0; p < T; ++p) {
        const auto tok = static_cast<std::size_t>(window[p]);
        for (std::size_t i = 0; i < n; ++i) {
          x[p][i] = model.token_embedding(tok, i) + model.position_embedding(p, i);
        }
      }

      std::vector<BlockCache> caches(model.blocks.size());
      for (std::size_t blk = 0; blk < model.blocks.size(); ++blk) {
        const BlockWeights& b = model.blocks[blk];
        BlockCache& c = caches[blk];
        c.x_in = x;
        c.rms1.resize(T);
        c.u1.assign(T, std::vector<double>(n));
        for (std::size_t p = 0; p < T; ++p) {
          c.rms1[p] = rms_normalize(c.x_in[p], b.ln1_gain, c.u1[p]);
        }
        c.q.resize(T);
        c.k.resize(T);
        c.v.resize(T);
        for (std::size_t p = 0; p < T; ++p) {
          c.q[p] = matvec(b.w_q, c.u1[p]);
          c.k[p] = matvec(b.w_k, c.u1[p]);
          c.v[p] = matvec(b.w_v, c.u1[p]);
        }
        c.attw.assign(heads, std::vector<std::vector<double>>(T));
        c.ctx.assign(T, std::vector<double>(n, 0.0));
        for (std::size_t p = 0; p < T; ++p) {
          for (std::size_t head = 0; head < heads; ++head) {
            const std::size_t off = head * hd;
            auto& w = c.attw[head][p];
            w.resize(p + 1);
            double mx = -1e300;
            for (std::size_t j = 0; j <= p; ++j) {
              double dot = 0.0;
              for (std::size_t d = 0; d < hd; ++d) dot += c.q[p][off + d] * c.k[j][off + d];
              w[j] = dot * scale;
              mx = std::max(mx, w[j]);
            }
            double sum = 0.0;
            for (std::size_t j = 0; j <= p; ++j) {
              w[j] = std::exp(w[j] - mx);
              sum += w[j];
            }
            for (std::size_t j = 0; j <= p; ++j) {
              w[j] /= sum;
              for (std::size_t d = 0; d < hd; ++d) {
                c.ctx[p][off + d] += w[j] * c.v[j][off + d];
              }
            }
          }
        }
        c.x_mid = c.x_in;
        for (std::size_t p = 0; p < T; ++p) {
          auto att = matvec(b.w_o, c.ctx[p]);
          for (std::size_t i = 0; i < n; ++i) c.x_mid[p][i] += att[i];
        }
        c.rms2.resize(T);
        c.u2.assign(T, std::vector<double>(n));
        c.up_h.resize(T);
        c.gate_h.resize(T);
        c.hidden.assign(T, std::vector<double>(mdim));
        x = c.x_mid;
        for (std::size_t p = 0; p < T; ++p) {
          c.rms2[p] = rms_normalize(c.x_mid[p], b.ln2_gain, c.u2[p]);
          c.up_h[p] = matvec(b.w_up, c.u2[p]);
          c.gate_h[p] = matvec(b.w_gate, c.u2[p]);
          for (std::size_t i = 0; i < mdim; ++i) {
            c.hidden[p][i] = c.up_h[p][i] * silu(c.gate_h[p][i]);
          }
          auto down = matvec(b.w_down, c.hidden[p]);
          for (std::size_t i = 0; i < n; ++i) x[p][i] += down[i];
        }
      }

      std::vector<double> rmsf(T);
      std::vector<std::vector<double>> uf(T, std::vector<double>(n));
      std::vector<std::vector<double>> probs(T, std::vector<double>(V));
      double seq_loss = 0.0;
      for (std::size_t p = 0; p < T; ++p) {
        rmsf[p] = rms_normalize(x[p], model.final_gain, uf[p]);
        auto logits = matvec(model.head, uf[p]);
        double mx = logits[0];
        for (double vv : logits) mx = std::max(mx, vv);
        double sum = 0.0;
        for (std::size_t cidx = 0; cidx < V; ++cidx) {
          probs[p][cidx] = std::exp(logits[cidx] - mx);
          sum += probs[p][cidx];
        }
        for (std::size_t cidx = 0; cidx < V; ++cidx) probs[p][cidx] /= sum;
        seq_loss -= std::log(probs[p][static_cast<std::size_t>(window[p + 1])]);
      }
      seq_loss /= static_cast<double>(T);
      loss_acc += seq_loss;

      // ---- backward ----
      const double inv_norm =
          1.0 / (static_cast<double>(T) * static_cast<double>(cfg.batch_sequences));
      std::vector<std::vector<double>> dlogits(T, std::vector<double>(V));
      for (std::size_t p = 0; p < T; ++p) {
        for (std::size_t cidx = 0; cidx < V; ++cidx) {
          dlogits[p][cidx] = probs[p][cidx] * inv_norm;
        }
        dlogits[p][static_cast<std::size_t>(window[p + 1])] -= inv_norm;
      }

      std::vector<std::vector<double>> dx(T, std::vector<double>(n, 0.0));
      {
        accumulate_linear_grads(dlogits, uf, grads.head);
        std::vector<std::vector<double>> duf(T);
        backprop_linear_input(model.head, dlogits, duf, /*accumulate=*/false);
        for (std::size_t p = 0; p < T; ++p) {
          rms_backward(x[p], model.final_gain, rmsf[p], duf[p], dx[p], grads.final_gain);
        }
      }

      for (std::size_t blk = model.blocks.size(); blk-- > 0;) {
        const BlockWeights& b = model.blocks[blk];
        BlockCache& c = caches[blk];
        BlockWeights& gb = grads.blocks[blk];

        // MLP: x_out = x_mid + w_down * hidden
        std::vector<std::vector<double>> dhidden(T);
        backprop_linear_input(b.w_down, dx, dhidden, /*accumulate=*/false);
        accumulate_linear_grads(dx, c.hidden, gb.w_down);

        std::vector<std::vector<double>> dup(T, std::vector<double>(mdim));
        std::vector<std::vector<double>> dgate(T, std::vector<double>(mdim));
        for (std::size_t p = 0; p < T; ++p) {
          for (std::size_t i = 0; i < mdim; ++i) {
            const double sg = silu(c.gate_h[p][i]);
            dup[p][i] = dhidden[p][i] * sg;
            dgate[p][i] = dhidden[p][i] * c.up_h[p][i] * silu_derivative(c.gate_h[p][i]);
          }
        }
        accumulate_linear_grads(dup, c.u2, gb.w_up);
        accumulate_linear_grads(dgate, c.u2, gb.w_gate);
        std::vector<std::vector<double>> du2(T);
        backprop_linear_input(b.w_up, dup, du2, /*accumulate=*/false);
        backprop_linear_input(b.w_gate, dgate, du2, /*accumulate=*/true);

        // residual: dx flows to x_mid both directly and through the norm
        for (std::size_t p = 0; p < T; ++p) {
          rms_backward(c.x_mid[p], b.ln2_gain, c.rms2[p], du2[p], dx[p], gb.ln2_gain);
        }

        // attention: x_mid = x_in + w_o * ctx
        std::vector<std::vector<double>> dctx(T);
        backprop_linear_input(b.w_o, dx, dctx, /*accumulate=*/false);
        accumulate_linear_grads(dx, c.ctx, gb.w_o);

        std::vector<std::vector<double>> dq(T, std::vector<double>(n, 0.0));
        std::vector<std::vector<double>> dk(T, std::vector<double>(n, 0.0));
        std::vector<std::vector<double>> dv(T, std::vector<double>(n, 0.0));
        std::vector<double> dw;
        for (std::size_t p = 0; p < T; ++p) {
          for (std::size_t head = 0; head < heads; ++head) {
            const std::size_t off = head * hd;
            const auto& w = c.attw[head][p];
            dw.assign(p + 1, 0.0);
            for (std::size_t j = 0; j <= p; ++j) {
              double dot = 0.0;
              for (std::size_t d = 0; d < hd; ++d) {
                dot += dctx[p][off + d] * c.v[j][off + d];
                dv[j][off + d] += w[j] * dctx[p][off + d];
              }
              dw[j] = dot;
            }
            double wdot = 0.0;
            for (std::size_t j = 0; j <= p; ++j) wdot += w[j] * dw[j];
            for (std::size_t j = 0; j <= p; ++j) {
              const double ds = w[j] * (dw[j] - wdot) * scale;
              for (std::size_t d = 0; d < hd; ++d) {
                dq[p][off + d] += ds * c.k[j][off + d];
                dk[j][off + d] += ds * c.q[p][off + d];
              }
            }
          }
        }
        accumulate_linear_grads(dq, c.u1, gb.w_q);
        accumulate_linear_grads(dk, c.u1, gb.w_k);
        accumulate_linear_grads(dv, c.u1, gb.w_v);
        std::vector<std::vector<double>> du1(T);
        backprop_linear_input(b.w_q, dq, du1, /*accumulate=*/false);
        backprop_linear_input(b.w_k, dk, du1, /*accumulate=*/true);
        backprop_linear_input(b.w_v, dv, du1, /*accumulate=*/true);

        for (std::size_t p = 0; p < T; ++p) {
          rms_backward(c.x_in[p], b.ln1_gain, c.rms1[p], du1[p], dx[p], gb.ln1_gain);
        }
      }

      for (std::size_t p = 0; p < T; ++p) {
        const auto tok = static_cast<std::size_t>(window[p]);
        for (std::size_t i = 0; i < n; ++i) {
          grads.token_embedding(tok, i) += dx[p][i];
          grads.position_embedding(p, i) += dx[p][i];
        }
      }
    }

    last_loss = loss_acc / static_cast<double>(cfg.batch_sequences);

    // Adam
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    std::size_t offset = 0;
    for (std::size_t t = 0; t < params.size(); ++t) {
      double* w = params[t].data;
      const double* g = gviews[t].data;
      for (std::size_t i = 0; i < params[t].size; ++i) {
        const std::size_t s = offset + i;
        adam_m[s] = beta1 * adam_m[s] + (1.0 - beta1) * g[i];
        adam_v[s] = beta2 * adam_v[s] + (1.0 - beta2) * g[i] * g[i];
        const double mhat = adam_m[s] / bc1;
        const double vhat = adam_v[s] / bc2;
        w[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + eps);
      }
      offset += params[t].size;
    }
  }
  return last_loss;
}

// ---------------------------------------------------------------------------
// file format
// ---------------------------------------------------------------------------

namespace {

constexpr char kModelMagic[4] = {'R', 'S', 'P', 'W'};
constexpr std::uint8_t kModelVersion = 1;

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

void write_tensor(std::ofstream& out, std::span<const double> values) {
  std::vector<float> buf(values.begin(), values.end());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

void read_tensor(std::ifstream& in, std::span<double> values, const std::string& path) {
  std::vector<float> buf(values.size());
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!in) throw io_error("truncated file: " + path);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = buf[i];
}

}  // namespace

void write_model(const ToyModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open model file for writing: " + path);
  out.write(kModelMagic, 4);
  write_pod(out, kModelVersion);
  write_pod(out, static_cast<std::uint32_t>(model.config.num_layers));
  write_pod(out, static_cast<std::uint32_t>(model.config.embed_dim));
  write_pod(out, static_cast<std::uint32_t>(model.config.hidden_dim));
  write_pod(out, static_cast<std::uint32_t>(model.config.num_heads));
  write_pod(out, static_cast<std::uint32_t>(model.config.vocab_size));
  write_pod(out, static_cast<std::uint64_t>(model.config.seed));
  write_pod(out, static_cast<std::uint32_t>(model.config.max_seq));
  write_tensor(out, model.token_embedding.values());
  write_tensor(out, model.position_embedding.values());
  for (const auto& b : model.blocks) {
    write_tensor(out, b.w_q.values());
    write_tensor(out, b.w_k.values());
    write_tensor(out, b.w_v.values());
    write_tensor(out, b.w_o.values());
    write_tensor(out, b.w_up.values());
    write_tensor(out, b.w_gate.values());
    write_tensor(out, b.w_down.values());
    write_tensor(out, b.ln1_gain);
    write_tensor(out, b.ln2_gain);
  }
  write_tensor(out, model.final_gain);
  write_tensor(out, model.head.values());
  if (!out) throw io_error("write failed: " + path);
}

ToyModel read_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open model file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kModelMagic, 4) != 0) {
    throw io_error("bad magic in " + path + " (expected RSPW)");
  }
  const auto version = read_pod<std::uint8_t>(in, path);
  if (version != kModelVersion) {
    throw io_error("unsupported RSPW version " + std::to_string(version) + " in " + path);
  }
  ModelConfig cfg;
  cfg.num_layers = read_pod<std::uint32_t>(in, path);
  cfg.embed_dim = read_pod<std::uint32_t>(in, path);
  cfg.hidden_dim = read_pod<std::uint32_t>(in, path);
  cfg.num_heads = read_pod<std::uint32_t>(in, path);
  cfg.vocab_size = read_pod<std::uint32_t>(in, path);
  cfg.seed = read_pod<std::uint64_t>(in, path);
  cfg.max_seq = read_pod<std::uint32_t>(in, path);
  cfg.validate();

  ToyModel m;
  m.config = cfg;
  const std::size_t n = cfg.embed_dim;
  const std::size_t h = cfg.hidden_dim;

  auto read_matrix = [&](std::size_t rows, std::size_t cols) {
    Matrix mat(rows, cols);
    read_tensor(in, {mat.data(), mat.size()}, path);
    return mat;
  };
  m.token_embedding = read_matrix(cfg.vocab_size, n);
  m.position_embedding = read_matrix(cfg.max_seq, n);
  m.blocks.resize(cfg.num_layers);
  for (auto& b : m.blocks) {
    b.w_q = read_matrix(n, n);
    b.w_k = read_matrix(n, n);
    b.w_v = read_matrix(n, n);
    b.w_o = read_matrix(n, n);
    b.w_up = read_matrix(h, n);
    b.w_gate = read_matrix(h, n);
    b.w_down = read_matrix(n, h);
    b.ln1_gain.resize(n);
    read_tensor(in, b.ln1_gain, path);
    b.ln2_gain.resize(n);
    read_tensor(in, b.ln2_gain, path);
  }
  m.final_gain.resize(n);
  read_tensor(in, m.final_gain, path);
  m.head = read_matrix(cfg.vocab_size, n);
  return m;
}

}  // namespace rsparse
