#include "rsparse/corpus.hpp"

#include <numeric>

#include "rsparse/errors.hpp"
#include "rsparse/rng.hpp"

namespace rsparse {

namespace {

std::vector<int> random_permutation(std::size_t n, Rng& rng) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

}  // namespace

SyntheticCorpus generate_corpus(const std::string& rule, std::uint64_t seed,
                                std::size_t length, std::size_t vocab_size) {
  if (length < 1) throw usage_error("corpus length must be at least 1");
  if (vocab_size < 4) throw usage_error("corpus vocab size must be at least 4");

  SyntheticCorpus corpus;
  corpus.vocab_size = vocab_size;
  corpus.rule = rule;
  corpus.seed = seed;
  corpus.tokens.reserve(length);

  if (rule == "uniform") {
    Rng rng(derive_seed(seed, "corpus.uniform.stream"));
    for (std::size_t i = 0; i < length; ++i) {
      corpus.tokens.push_back(static_cast<int>(rng.uniform_index(vocab_size)));
    }
    return corpus;
  }

  if (rule == "markov2") {
    // next = table[two-back token], with the table picked by the parity of
    // the previous token. A model must combine both context positions to
    // beat the escape floor; the previous token alone leaves the lookup
    // nearly uniform.
    Rng table_rng(derive_seed(seed, "corpus.markov2.tables"));
    const auto table_even = random_permutation(vocab_size, table_rng);
    const auto table_odd = random_permutation(vocab_size, table_rng);

    Rng rng(derive_seed(seed, "corpus.markov2.stream"));
    int prev2 = static_cast<int>(rng.uniform_index(vocab_size));
    int prev1 = static_cast<int>(rng.uniform_index(vocab_size));
    for (std::size_t i = 0; i < length; ++i) {
      const double u = rng.uniform01();
      int next;
      if (u < 0.10) {
        next = static_cast<int>(rng.uniform_index(vocab_size));
      } else {
        const int base = (prev1 % 2 == 0) ? table_even[prev2] : table_odd[prev2];
        int delta = 0;
        if (u >= 0.70) delta = (u < 0.90) ? 1 : 2;
        next = (base + delta) % static_cast<int>(vocab_size);
      }
      corpus.tokens.push_back(next);
      prev2 = prev1;
      prev1 = next;
    }
    return corpus;
  }

  throw usage_error("unknown corpus rule: " + rule);
}

}  // namespace rsparse
