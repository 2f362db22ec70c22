#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rsparse/model.hpp"
#include "rsparse/rng.hpp"

namespace rsparse {

// Per-layer sparse/low-rank split. rho_i is the sparse share of layer i's
// I/O budget C_i: s_i = rho_i * C_i and r_i = round((1 - rho_i) * C_i *
// m*n/(m+n)), clamped to the layer's rank range.
struct Recipe {
  std::vector<double> rho;
  std::vector<double> budget;
  std::uint64_t seed = 0;
  double loss = std::numeric_limits<double>::quiet_NaN();

  std::size_t num_layers() const { return rho.size(); }
  double keep_fraction(std::size_t i) const { return rho[i] * budget[i]; }
  std::size_t rank_for(std::size_t i, std::size_t m_in, std::size_t m_out) const;
  SparsityPlan plan_for(std::size_t i, std::size_t m_in, std::size_t m_out) const;
};

struct SearchConfig {
  std::size_t population = 32;
  double mutation_rate = 0.5;    // p_m
  double crossover_rate = 0.5;   // p_c
  std::size_t generations = 5;   // T
  std::size_t group_size = 28;
  std::uint64_t rng_seed = 0;
  std::size_t eval_token_budget = 16 * 128;  // calibration tokens
  bool groupwise = true;

  void validate() const;
};

// Caches one SVD and one score matrix per linear layer plus the calibration
// sequences, so candidate recipes cost only factor slicing + forward passes.
class RecipeEvaluator {
 public:
  RecipeEvaluator(const ToyModel& model, std::span<const int> calibration_tokens,
                  std::size_t sequence_length);

  std::size_t num_layers() const { return svds_.size(); }
  const ToyModel& model() const { return model_; }
  const ScoreMatrix& layer_score(std::size_t i) const { return scores_[i]; }
  const SvdResult& layer_svd(std::size_t i) const { return svds_[i]; }
  std::size_t num_sequences() const { return sequences_.size(); }

  DecomposedModel build(const Recipe& recipe) const;

  // mean perplexity over the calibration sequences, prefill/decode split at
  // half of each sequence
  double loss(const Recipe& recipe) const;
  double dense_loss() const;

 private:
  const ToyModel& model_;
  std::vector<SvdResult> svds_;
  std::vector<ScoreMatrix> scores_;
  std::vector<ColMajorMatrix> w_cols_;  // shared across candidates
  std::vector<std::vector<int>> sequences_;
};

// Differential-evolution style mutant: pool[x1] + p_m * (pool[x2] - pool[x3])
// with x1, x2, x3 distinct and different from exclude_index, clamped into
// [0,1] elementwise. Pool must hold at least 4 individuals.
std::vector<double> mutate_clamp(std::span<const std::vector<double>> pool,
                                 std::size_t exclude_index, double p_m, Rng& rng);

// Contiguous [start, end) layer groups in depth order; the last group may be
// smaller.
std::vector<std::pair<std::size_t, std::size_t>> groupwise_schedule(
    std::size_t num_layers, std::size_t group_size);

Recipe uniform_recipe(std::size_t num_layers, double rho, double budget);

struct SearchTrace {
  std::vector<double> best_losses;  // best-so-far after every generation
};

// Evolutionary search for the per-layer rho under fixed budgets. Population
// selection keeps the best `population` individuals of parents + offspring
// (ties to the older individual), so the best loss never worsens.
Recipe evolve(const RecipeEvaluator& evaluator, const SearchConfig& config,
              std::span<const double> budget, SearchTrace* trace = nullptr);

// JSON recipe file: {"layers":[{name,rho,budget,s,r}...], "seed", "loss"}.
void write_recipe(const Recipe& recipe, const ToyModel& model, const std::string& path);
Recipe read_recipe(const std::string& path);

}  // namespace rsparse
