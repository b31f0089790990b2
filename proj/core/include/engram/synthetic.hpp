#pragma once

#include <cstdint>

#include "engram/ngram.hpp"

namespace engram {

// Deterministic toy corpora for tests, demos and the acceptance suite.

// Zipf(exponent) over [0, vocab_size) sampled by inverse CDF.
Corpus make_zipf_corpus(std::uint32_t vocab_size, std::uint64_t n_tokens,
                        double exponent, std::uint64_t seed,
                        std::uint64_t doc_len = 4096);

// Uniform i.i.d. tokens.
Corpus make_uniform_corpus(std::uint32_t vocab_size, std::uint64_t n_tokens,
                           std::uint64_t seed, std::uint64_t doc_len = 4096);

// 16-symbol stream with a planted hot/cold structure. The eight bigrams
// (0,1),(1,2),...,(6,7),(7,0) form a cycle with deterministic successors; at
// (6,7) the walk escapes to a uniform draw with probability exit_prob. Every
// other bigram is followed by a uniform draw over all 16 symbols, so frequent
// bigrams are exactly the predictable ones.
Corpus make_hot_cold_corpus(std::uint64_t n_tokens, std::uint64_t seed,
                            double exit_prob = 0.1, std::uint64_t doc_len = 4096);

}  // namespace engram
