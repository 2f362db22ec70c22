#include "rsparse/search.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "rsparse/errors.hpp"
#include "rsparse/scores.hpp"

namespace rsparse {

std::size_t Recipe::rank_for(std::size_t i, std::size_t m_in, std::size_t m_out) const {
  const double m = static_cast<double>(m_out);
  const double n = static_cast<double>(m_in);
  const double raw = (1.0 - rho[i]) * budget[i] * (m * n) / (m + n);
  const auto r = static_cast<long long>(std::llround(raw));
  const long long cap = static_cast<long long>(std::min(m_in, m_out));
  return static_cast<std::size_t>(std::clamp(r, 0LL, cap));
}

SparsityPlan Recipe::plan_for(std::size_t i, std::size_t m_in, std::size_t m_out) const {
  return SparsityPlan{keep_fraction(i), rank_for(i, m_in, m_out)};
}

void SearchConfig::validate() const {
  if (population < 4) throw usage_error("population must be at least 4 for mutation");
  if (!(mutation_rate >= 0.0) || !(crossover_rate >= 0.0 && crossover_rate <= 1.0)) {
    throw usage_error("mutation/crossover rates out of range");
  }
  if (group_size < 1) throw usage_error("group_size must be at least 1");
  if (eval_token_budget < 2) throw usage_error("eval_token_budget too small");
}

RecipeEvaluator::RecipeEvaluator(const ToyModel& model,
                                 std::span<const int> calibration_tokens,
                                 std::size_t sequence_length)
    : model_(model) {
  if (sequence_length < 2) throw usage_error("calibration sequences need length >= 2");
  const std::size_t num_seq = calibration_tokens.size() / sequence_length;
  if (num_seq == 0) throw usage_error("empty calibration set");
  for (std::size_t s = 0; s < num_seq; ++s) {
    auto chunk = calibration_tokens.subspan(s * sequence_length, sequence_length);
    sequences_.emplace_back(chunk.begin(), chunk.end());
  }

  // layer inputs observed on the dense model over the calibration stream
  std::vector<std::vector<std::vector<double>>> inputs;
  std::vector<std::vector<std::vector<double>>> seq_inputs;
  for (const auto& seq : sequences_) {
    collect_linear_inputs(model_, seq, seq_inputs);
    if (inputs.empty()) {
      inputs = std::move(seq_inputs);
    } else {
      for (std::size_t l = 0; l < inputs.size(); ++l) {
        for (auto& v : seq_inputs[l]) inputs[l].push_back(std::move(v));
      }
    }
  }

  const std::size_t L = model_.num_linear_layers();
  svds_.reserve(L);
  scores_.reserve(L);
  w_cols_.reserve(L);
  for (std::size_t l = 0; l < L; ++l) {
    const Matrix& w = model_.linear_weight(l);
    svds_.push_back(svd(w));
    scores_.push_back(aggregate_scores(inputs[l], svds_.back(), model_.linear_name(l)));
    w_cols_.push_back(ColMajorMatrix::from_row_major(w));
  }
}

DecomposedModel RecipeEvaluator::build(const Recipe& recipe) const {
  if (recipe.num_layers() != num_layers()) {
    throw usage_error("recipe has " + std::to_string(recipe.num_layers()) +
                      " layers, model has " + std::to_string(num_layers()));
  }
  DecomposedModel dm;
  dm.layers.reserve(num_layers());
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const Matrix& w = model_.linear_weight(l);
    const SparsityPlan plan = recipe.plan_for(l, w.cols(), w.rows());
    DecomposedLayer layer = decompose_with_svd(w, plan, scores_[l], svds_[l]);
    dm.layers.push_back(std::move(layer));
  }
  return dm;
}

double RecipeEvaluator::loss(const Recipe& recipe) const {
  const DecomposedModel dm = build(recipe);
  double acc = 0.0;
  for (const auto& seq : sequences_) {
    acc += perplexity(model_, seq, seq.size() / 2, &dm);
  }
  return acc / static_cast<double>(sequences_.size());
}

double RecipeEvaluator::dense_loss() const {
  double acc = 0.0;
  for (const auto& seq : sequences_) {
    acc += perplexity(model_, seq, seq.size() / 2);
  }
  return acc / static_cast<double>(sequences_.size());
}

std::vector<double> mutate_clamp(std::span<const std::vector<double>> pool,
                                 std::size_t exclude_index, double p_m, Rng& rng) {
  if (pool.size() < 4) {
    throw usage_error("mutation pool must hold at least 4 individuals, got " +
                      std::to_string(pool.size()));
  }
  std::size_t picks[3];
  for (int t = 0; t < 3; ++t) {
    std::size_t x;
    bool fresh;
    do {
      x = rng.uniform_index(pool.size());
      fresh = x != exclude_index;
      for (int s = 0; s < t; ++s) fresh = fresh && x != picks[s];
    } while (!fresh);
    picks[t] = x;
  }
  const auto& x1 = pool[picks[0]];
  const auto& x2 = pool[picks[1]];
  const auto& x3 = pool[picks[2]];
  std::vector<double> m(x1.size());
  for (std::size_t g = 0; g < m.size(); ++g) {
    m[g] = std::clamp(x1[g] + p_m * (x2[g] - x3[g]), 0.0, 1.0);
  }
  return m;
}

std::vector<std::pair<std::size_t, std::size_t>> groupwise_schedule(std::size_t num_layers,
                                                                    std::size_t group_size) {
  if (group_size < 1) throw usage_error("group_size must be at least 1");
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  for (std::size_t start = 0; start < num_layers; start += group_size) {
    groups.emplace_back(start, std::min(start + group_size, num_layers));
  }
  return groups;
}

Recipe uniform_recipe(std::size_t num_layers, double rho, double budget) {
  if (!(rho >= 0.0 && rho <= 1.0) || !(budget >= 0.0 && budget <= 1.0)) {
    throw usage_error("uniform_recipe expects rho and budget in [0, 1]");
  }
  Recipe r;
  r.rho.assign(num_layers, rho);
  r.budget.assign(num_layers, budget);
  return r;
}

namespace {

struct Individual {
  std::vector<double> rho;
  double loss = 0.0;
  std::uint64_t birth = 0;  // global creation order; older wins ties
};

}  // namespace

Recipe evolve(const RecipeEvaluator& evaluator, const SearchConfig& config,
              std::span<const double> budget, SearchTrace* trace) {
  config.validate();
  const std::size_t L = evaluator.num_layers();
  if (L == 0) throw usage_error("model has no linear layers to search over");
  if (budget.size() != L) {
    throw usage_error("budget vector length " + std::to_string(budget.size()) +
                      " does not match layer count " + std::to_string(L));
  }
  if (evaluator.num_sequences() == 0) throw usage_error("empty calibration set");

  Rng rng(derive_seed(config.rng_seed, "search.evolve"));
  std::uint64_t birth_counter = 0;

  const std::vector<double> budget_vec(budget.begin(), budget.end());
  auto eval_loss = [&](const std::vector<double>& rho) {
    Recipe r;
    r.rho = rho;
    r.budget = budget_vec;
    return evaluator.loss(r);
  };

  // the paper's uniform baseline is seeded into the first population so the
  // search never returns anything worse
  Individual best;
  best.rho.assign(L, 0.95);
  best.loss = eval_loss(best.rho);
  best.birth = birth_counter++;

  const auto groups = config.groupwise ? groupwise_schedule(L, config.group_size)
                                       : groupwise_schedule(L, std::max<std::size_t>(L, 1));

  for (const auto& [g_start, g_end] : groups) {
    std::vector<Individual> pop;
    pop.reserve(config.population);
    pop.push_back(best);
    for (std::size_t i = 1; i < config.population; ++i) {
      Individual ind;
      ind.rho = best.rho;  // out-of-group genes frozen at the best-so-far values
      for (std::size_t g = g_start; g < g_end; ++g) ind.rho[g] = rng.uniform01();
      ind.loss = eval_loss(ind.rho);
      ind.birth = birth_counter++;
      pop.push_back(std::move(ind));
    }
    std::stable_sort(pop.begin(), pop.end(), [](const Individual& a, const Individual& b) {
      if (a.loss != b.loss) return a.loss < b.loss;
      return a.birth < b.birth;
    });
    if (trace) trace->best_losses.push_back(pop.front().loss);

    std::vector<std::vector<double>> pool(config.population);
    for (std::size_t t = 0; t < config.generations; ++t) {
      for (std::size_t i = 0; i < config.population; ++i) pool[i] = pop[i].rho;
      std::vector<Individual> offspring;
      offspring.reserve(config.population);
      for (std::size_t i = 0; i < config.population; ++i) {
        auto mutant = mutate_clamp(pool, i, config.mutation_rate, rng);
        Individual child;
        child.rho = pop[i].rho;
        for (std::size_t g = 0; g < L; ++g) {
          const double alpha = rng.uniform01();
          if (alpha > config.crossover_rate) child.rho[g] = mutant[g];
        }
        child.loss = eval_loss(child.rho);
        child.birth = birth_counter++;
        offspring.push_back(std::move(child));
      }
      for (auto& child : offspring) pop.push_back(std::move(child));
      std::stable_sort(pop.begin(), pop.end(), [](const Individual& a, const Individual& b) {
        if (a.loss != b.loss) return a.loss < b.loss;
        return a.birth < b.birth;
      });
      pop.resize(config.population);
      if (trace) trace->best_losses.push_back(pop.front().loss);
    }
    best = pop.front();
  }

  Recipe out;
  out.rho = best.rho;
  out.budget = budget_vec;
  out.seed = config.rng_seed;
  out.loss = best.loss;
  return out;
}

void write_recipe(const Recipe& recipe, const ToyModel& model, const std::string& path) {
  if (recipe.num_layers() != model.num_linear_layers()) {
    throw usage_error("recipe/model layer count mismatch");
  }
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < recipe.num_layers(); ++l) {
    const Matrix& w = model.linear_weight(l);
    layers.push_back({
        {"name", model.linear_name(l)},
        {"rho", recipe.rho[l]},
        {"budget", recipe.budget[l]},
        {"s", recipe.keep_fraction(l)},
        {"r", recipe.rank_for(l, w.cols(), w.rows())},
    });
  }
  nlohmann::json doc{
      {"layers", layers},
      {"seed", recipe.seed},
      {"loss", recipe.loss},
  };
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open recipe file for writing: " + path);
  out << doc.dump(2) << '\n';
  if (!out) throw io_error("write failed: " + path);
}

Recipe read_recipe(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open recipe file: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw io_error("malformed recipe JSON in " + path + ": " + e.what());
  }
  Recipe r;
  try {
    for (const auto& layer : doc.at("layers")) {
      r.rho.push_back(layer.at("rho").get<double>());
      r.budget.push_back(layer.at("budget").get<double>());
    }
    r.seed = doc.at("seed").get<std::uint64_t>();
    r.loss = doc.at("loss").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw io_error("recipe JSON missing fields in " + path + ": " + e.what());
  }
  for (std::size_t i = 0; i < r.rho.size(); ++i) {
    if (!(r.rho[i] >= 0.0 && r.rho[i] <= 1.0) ||
        !(r.budget[i] >= 0.0 && r.budget[i] <= 1.0)) {
      throw io_error("recipe values out of [0,1] in " + path);
    }
  }
  return r;
}

}  // namespace rsparse
