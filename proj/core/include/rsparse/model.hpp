#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rsparse/layer.hpp"
#include "rsparse/matrix.hpp"

namespace rsparse {

struct ModelConfig {
  std::size_t num_layers = 4;
  std::size_t embed_dim = 64;    // n
  std::size_t hidden_dim = 172;  // m, gated MLP expansion
  std::size_t num_heads = 4;
  std::size_t vocab_size = 256;
  std::uint64_t seed = 1;
  std::size_t max_seq = 256;  // learned position table length

  void validate() const;
};

// The seven linear layers of one pre-norm block, plus its two norm gains.
struct BlockWeights {
  Matrix w_q, w_k, w_v, w_o;  // n x n
  Matrix w_up, w_gate;        // m x n
  Matrix w_down;              // n x m
  std::vector<double> ln1_gain, ln2_gain;  // n
};

inline constexpr std::size_t kLinearsPerBlock = 7;

// Slot order within a block; global linear index = block * 7 + slot.
enum class LinearSlot : std::size_t { Q = 0, K, V, O, Up, Gate, Down };

const char* linear_slot_name(LinearSlot slot);

struct ToyModel {
  ModelConfig config;
  Matrix token_embedding;     // vocab x n
  Matrix position_embedding;  // max_seq x n
  std::vector<BlockWeights> blocks;
  std::vector<double> final_gain;  // n
  Matrix head;                     // vocab x n

  std::size_t num_linear_layers() const { return blocks.size() * kLinearsPerBlock; }
  const Matrix& linear_weight(std::size_t linear_index) const;
  std::string linear_name(std::size_t linear_index) const;
};

// Gaussian init (sigma = 0.02), unit norm gains, all draws seeded from
// config.seed.
ToyModel init_model(const ModelConfig& config);

// One decomposed layer per linear slot, in global linear-index order.
struct DecomposedModel {
  std::vector<DecomposedLayer> layers;
};

// H = (w_up x) ⊙ silu(w_gate x) pushed through w_down. Any of the three
// matmuls can be routed through a decomposed layer (nullptr = dense).
std::vector<double> mlp_forward(std::span<const double> x, const BlockWeights& b,
                                const DecomposedLayer* up = nullptr,
                                const DecomposedLayer* gate = nullptr,
                                const DecomposedLayer* down = nullptr);

// Causal pre-norm decoder over the whole sequence (functional KV recompute).
// With a decomposed model, positions >= decode_start run all seven linears
// per block through their decomposed forms; earlier positions simulate the
// dense prefill. Returns logits, one row per position.
Matrix model_forward(const ToyModel& model, std::span<const int> tokens,
                     const DecomposedModel* decomposed = nullptr,
                     std::size_t decode_start = 0);

// exp(mean next-token NLL) over targets strictly after split_point; positions
// before split_point run dense (prefill), the rest decomposed when given.
double perplexity(const ToyModel& model, std::span<const int> tokens,
                  std::size_t split_point, const DecomposedModel* decomposed = nullptr);

// Runs the dense model and collects the input vector seen by every linear
// layer at every position: out[linear_index] gets one entry per position.
void collect_linear_inputs(const ToyModel& model, std::span<const int> tokens,
                           std::vector<std::vector<std::vector<double>>>& out);

struct TrainConfig {
  std::size_t steps = 300;
  std::size_t batch_sequences = 4;
  std::size_t seq_len = 128;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
};

// Adam training on next-token cross-entropy over windows sampled from the
// corpus. Returns the final-step mean loss (nats).
double train_model(ToyModel& model, std::span<const int> corpus, const TrainConfig& cfg);

// RSPW container: config block then every parameter tensor in declaration
// order, row-major 32-bit little-endian floats.
void write_model(const ToyModel& model, const std::string& path);
ToyModel read_model(const std::string& path);

}  // namespace rsparse
