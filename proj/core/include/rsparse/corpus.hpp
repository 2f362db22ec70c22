#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rsparse {

// Deterministic synthetic token stream; regeneration from (rule, seed) is
// bit-identical. Stands in for natural-text calibration data.
struct SyntheticCorpus {
  std::vector<int> tokens;
  std::size_t vocab_size = 0;
  std::string rule;
  std::uint64_t seed = 0;
};

// rule "markov2": an order-2 stream over two seeded permutation tables; the
// branch taken depends on the parity of the token two steps back, plus a
// small jitter and a 10% uniform escape. Learnable structure with
// conditional entropy far below the unigram entropy.
// rule "uniform": i.i.d. tokens; a null control whose perplexity no model
// can beat past vocab_size.
SyntheticCorpus generate_corpus(const std::string& rule, std::uint64_t seed,
                                std::size_t length, std::size_t vocab_size);

}  // namespace rsparse
