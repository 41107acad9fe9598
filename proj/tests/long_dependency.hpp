#pragma once

// Synthetic corpus with a dependency spanning `lag` positions.
//
// Each sentence is `lag` tokens drawn uniformly from a "key" alphabet A,
// followed by `lag` tokens from a disjoint alphabet B where token t is
// perm(token t - lag), then EOS. Only the key half carries entropy, so a
// model that can see `lag` steps back can reach
//
//   H = lag * ln|A| / (2*lag + 1)   nats per predicted position
//
// while a model limited to the two previous words cannot know which key
// produced the next B token.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "fsmn/data.hpp"

namespace fsmn::testing {

struct LongDependencyCorpus {
  std::size_t alphabet = 16;
  std::size_t lag = 10;

  std::size_t vocab_size() const { return kReservedTokens + 2 * alphabet; }
  TokenId key_token(std::size_t i) const { return static_cast<TokenId>(kReservedTokens + i); }
  TokenId mapped_token(std::size_t i) const {
    // fixed permutation of the B alphabet; 7 is coprime with any power of two
    return static_cast<TokenId>(kReservedTokens + alphabet + (7 * i + 3) % alphabet);
  }
  std::size_t sentence_positions() const { return 2 * lag + 1; }

  std::vector<Sentence> generate(std::size_t min_tokens, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::vector<Sentence> out;
    std::size_t tokens = 0;
    while (tokens < min_tokens) {
      Sentence s;
      std::vector<std::size_t> keys(lag);
      for (auto& k : keys) {
        k = static_cast<std::size_t>(rng() % alphabet);
        s.push_back(key_token(k));
      }
      for (auto k : keys) s.push_back(mapped_token(k));
      s.push_back(kEos);
      tokens += s.size();
      out.push_back(std::move(s));
    }
    return out;
  }

  /// Conditional entropy of the generator per predicted position (nats).
  double entropy_per_position() const {
    return static_cast<double>(lag) * std::log(static_cast<double>(alphabet)) /
           static_cast<double>(sentence_positions());
  }

  double perplexity_bound() const { return std::exp(entropy_per_position()); }
};

}  // namespace fsmn::testing
