#pragma once

// Deterministic offline providers. They make the full pipeline runnable
// without network access and give tests fixed, hand-checkable outputs.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "sumfeat/lmclients.hpp"

namespace sumfeat {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace stub_detail {

/// Lowercase alphanumeric words of `text`.
inline std::vector<std::string> simple_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// Whitespace tokens that keep their leading whitespace, so that the
/// concatenation of all tokens reproduces the text.
inline std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t j = i;
    while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace stub_detail

/// Tokens whose word occurs in the context get log-probability -0.25; other
/// tokens get a hash-derived value in [-3, -1).
class StubLogProbProvider : public LogProbProvider {
 public:
  std::vector<TokenLogProb> score_continuation(std::string_view context,
                                               std::string_view continuation) override {
    const auto ctx_words = stub_detail::simple_words(context);
    const std::unordered_set<std::string> seen(ctx_words.begin(), ctx_words.end());
    std::vector<TokenLogProb> out;
    for (auto& tok : stub_detail::whitespace_tokens(continuation)) {
      const auto words = stub_detail::simple_words(tok);
      const std::string core = words.empty() ? tok : words.front();
      const double lp = seen.count(core) > 0
                            ? -0.25
                            : -(1.0 + static_cast<double>(fnv1a(core) % 1000) / 500.0);
      out.push_back({std::move(tok), lp});
    }
    return out;
  }
  std::string model_id() const override { return "stub-logprob-v1"; }
};

/// Signed feature hashing of lowercase words into 64 dimensions, plus a
/// constant component so no text maps to the zero vector.
class StubEmbeddingProvider : public EmbeddingProvider {
 public:
  static constexpr std::size_t kDimension = 64;

  std::vector<double> embed(std::string_view text) override {
    std::vector<double> v(kDimension, 0.0);
    v[0] = 1.0;
    for (const auto& w : stub_detail::simple_words(text)) {
      const auto h = fnv1a(w);
      const std::size_t slot = 1 + h % (kDimension - 1);
      v[slot] += (h >> 32) & 1 ? 1.0 : -1.0;
    }
    return v;
  }
  std::string model_id() const override { return "stub-embed-v1"; }
};

/// Answers "Score: k" with k derived from the prompt hash.
class StubChatProvider : public ChatProvider {
 public:
  std::string complete(std::string_view prompt) override {
    const auto k = 1 + fnv1a(prompt) % 5;
    return "Score: " + std::to_string(k);
  }
  std::string model_id() const override { return "stub-judge-v1"; }
};

}  // namespace sumfeat
