#pragma once

// Unigram entropy, perplexity and Gini index over a text's own word
// distribution.

#include <cmath>
#include <map>
#include <string>
#include <string_view>

#include "sumfeat/common.hpp"
#include "sumfeat/textstats.hpp"

namespace sumfeat {

/// How unigram probabilities are estimated. Only within-text relative
/// frequency is implemented; the name is recorded in output metadata.
inline constexpr std::string_view kUnigramEstimation = "within-text";

struct UnigramDistribution {
  std::map<std::string, double, std::less<>> probs;
  long token_count = 0;
  long distinct_count = 0;
};

namespace infometrics_detail {

inline std::map<std::string, long, std::less<>> counts(const TokenizedText& tokens) {
  std::map<std::string, long, std::less<>> c;
  for (const auto& w : tokens.words) ++c[w];
  return c;
}

}  // namespace infometrics_detail

inline UnigramDistribution unigram_distribution(const TokenizedText& tokens) {
  if (tokens.words.empty()) throw TextError("unigram distribution of zero words");
  UnigramDistribution dist;
  dist.token_count = static_cast<long>(tokens.words.size());
  const auto total = static_cast<double>(dist.token_count);
  for (const auto& [word, count] : infometrics_detail::counts(tokens)) {
    dist.probs.emplace(word, static_cast<double>(count) / total);
  }
  dist.distinct_count = static_cast<long>(dist.probs.size());
  return dist;
}

/// Shannon entropy in bits.
inline double entropy(const UnigramDistribution& dist) {
  double h = 0.0;
  for (const auto& [_, p] : dist.probs) h -= p * std::log2(p);
  // -0.0 for the single-type case reads oddly in output files.
  return h == 0.0 ? 0.0 : h;
}

/// exp of the mean negative natural-log probability of the tokens under
/// `dist`. Summation runs over word types in sorted order, so the result
/// does not depend on word order.
inline double unigram_perplexity(const TokenizedText& tokens,
                                 const UnigramDistribution& dist) {
  if (tokens.words.empty()) throw TextError("perplexity of zero words");
  double nll = 0.0;
  for (const auto& [word, count] : infometrics_detail::counts(tokens)) {
    auto it = dist.probs.find(word);
    if (it == dist.probs.end()) {
      throw TextError("token '" + word + "' absent from unigram distribution");
    }
    nll -= static_cast<double>(count) * std::log(it->second);
  }
  return std::exp(nll / static_cast<double>(tokens.words.size()));
}

/// 1 - sum of squared probabilities.
inline double gini_index(const UnigramDistribution& dist) {
  double sq = 0.0;
  for (const auto& [_, p] : dist.probs) sq += p * p;
  return 1.0 - sq;
}

}  // namespace sumfeat
