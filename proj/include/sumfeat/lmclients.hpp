#pragma once

// Language-model service clients: per-token log-probabilities for
// conditional perplexity, sentence embeddings for source/summary cosine
// similarity, and chat completions for judging. Includes the on-disk
// response cache and retry policy shared by all providers.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <spdlog/spdlog.h>

#include "httplib.h"
#include "json.hpp"
#include "sumfeat/common.hpp"
#include "sumfeat/io.hpp"

namespace sumfeat {

enum class ProviderErrorKind {
  kTransport,        // connection, timeout, TLS
  kRateLimited,      // HTTP 429
  kServer,           // HTTP 5xx
  kAuth,             // HTTP 401/403
  kContextOverflow,  // input longer than the model context window
  kValidation,       // malformed request or response
  kEmptyContinuation,
};

inline std::string_view to_string(ProviderErrorKind k) {
  switch (k) {
    case ProviderErrorKind::kTransport: return "transport";
    case ProviderErrorKind::kRateLimited: return "rate-limited";
    case ProviderErrorKind::kServer: return "server";
    case ProviderErrorKind::kAuth: return "auth";
    case ProviderErrorKind::kContextOverflow: return "context-overflow";
    case ProviderErrorKind::kValidation: return "validation";
    case ProviderErrorKind::kEmptyContinuation: return "empty-continuation";
  }
  return "unknown";
}

class ProviderError : public Error {
 public:
  ProviderError(ProviderErrorKind kind, const std::string& what, int status = 0)
      : Error(std::string(to_string(kind)) + " error: " + what),
        kind_(kind),
        status_(status) {}

  ProviderErrorKind kind() const { return kind_; }
  int status() const { return status_; }
  /// Worth retrying: the same request may succeed later.
  bool transient() const {
    return kind_ == ProviderErrorKind::kTransport ||
           kind_ == ProviderErrorKind::kRateLimited ||
           kind_ == ProviderErrorKind::kServer;
  }

 private:
  ProviderErrorKind kind_;
  int status_;
};

struct TokenLogProb {
  std::string token;
  double logprob = 0.0;
};

/// Scores a continuation given a leading context. Returns one entry per
/// provider token of the continuation, in order.
class LogProbProvider {
 public:
  virtual ~LogProbProvider() = default;
  virtual std::vector<TokenLogProb> score_continuation(std::string_view context,
                                                       std::string_view continuation) = 0;
  virtual std::string model_id() const = 0;
  virtual bool deterministic() const { return true; }
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<double> embed(std::string_view text) = 0;
  virtual std::string model_id() const = 0;
};

/// Single-turn chat completion.
class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual std::string complete(std::string_view prompt) = 0;
  virtual std::string model_id() const = 0;
};

// ---------------------------------------------------------------------------
// Retries

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{250};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{8000};
  /// Injectable for tests; defaults to std::this_thread::sleep_for.
  std::function<void(std::chrono::milliseconds)> sleep;
};

/// Calls fn, retrying transient ProviderErrors with exponential backoff.
/// Non-transient errors propagate immediately.
template <class Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
  auto delay = policy.initial_backoff;
  for (int attempt = 0;; ++attempt) {
    try {
      return fn();
    } catch (const ProviderError& e) {
      if (!e.transient() || attempt >= policy.max_retries) throw;
      spdlog::debug("retrying after {} ({} ms, attempt {}/{})", e.what(),
                    delay.count(), attempt + 1, policy.max_retries);
      if (policy.sleep) {
        policy.sleep(delay);
      } else {
        std::this_thread::sleep_for(delay);
      }
      delay = std::min(policy.max_backoff,
                       std::chrono::milliseconds(static_cast<long long>(
                           static_cast<double>(delay.count()) * policy.multiplier)));
    }
  }
}

// ---------------------------------------------------------------------------
// Disk cache

/// Content-addressed response cache. Each entry is one JSON file named by
/// its hex key; writes go through temp-file + rename, so concurrent readers
/// (and other processes) only ever see complete entries.
class DiskCache {
 public:
  explicit DiskCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  static std::string make_key(std::string_view model_id, std::string_view operation,
                              std::initializer_list<std::string_view> inputs) {
    std::string joined;
    for (auto in : inputs) {
      joined += std::to_string(in.size());
      joined.push_back(':');
      joined.append(in);
    }
    return content_hash({model_id, operation, joined});
  }

  std::optional<std::string> get(const std::string& key) const {
    std::shared_lock lock(mu_);
    const auto path = path_for(key);
    if (!std::filesystem::exists(path)) {
      misses_.fetch_add(1);
      return std::nullopt;
    }
    try {
      auto entry = nlohmann::json::parse(read_file(path));
      if (entry.value("key", "") != key) {
        misses_.fetch_add(1);
        return std::nullopt;
      }
      hits_.fetch_add(1);
      return entry.at("value").get<std::string>();
    } catch (const std::exception& e) {
      spdlog::warn("ignoring unreadable cache entry {}: {}", path.string(), e.what());
      misses_.fetch_add(1);
      return std::nullopt;
    }
  }

  void put(const std::string& key, std::string_view value) {
    nlohmann::ordered_json entry;
    entry["key"] = key;
    entry["created_at"] = utc_timestamp();
    entry["value"] = std::string(value);
    std::unique_lock lock(mu_);
    write_file_atomic(path_for(key), entry.dump());
  }

  const std::filesystem::path& dir() const { return dir_; }
  long hits() const { return hits_.load(); }
  long misses() const { return misses_.load(); }

 private:
  std::filesystem::path path_for(const std::string& key) const {
    return dir_ / (key + ".json");
  }

  static std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  std::filesystem::path dir_;
  mutable std::shared_mutex mu_;
  mutable std::atomic<long> hits_{0};
  mutable std::atomic<long> misses_{0};
};

/// Looks `key` up in the cache, otherwise computes, stores and returns.
template <class Fn>
std::string cached_call(DiskCache* cache, const std::string& key, Fn&& compute) {
  if (cache != nullptr) {
    if (auto hit = cache->get(key)) return *hit;
  }
  std::string value = compute();
  if (cache != nullptr) cache->put(key, value);
  return value;
}

class CachedLogProbProvider : public LogProbProvider {
 public:
  CachedLogProbProvider(LogProbProvider& inner, DiskCache& cache)
      : inner_(inner), cache_(cache) {}

  std::vector<TokenLogProb> score_continuation(std::string_view context,
                                               std::string_view continuation) override {
    const auto key = DiskCache::make_key(inner_.model_id(), "score_continuation",
                                         {context, continuation});
    const auto raw = cached_call(&cache_, key, [&] {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& t : inner_.score_continuation(context, continuation)) {
        arr.push_back({t.token, t.logprob});
      }
      return arr.dump();
    });
    std::vector<TokenLogProb> out;
    for (const auto& item : nlohmann::json::parse(raw)) {
      out.push_back({item.at(0).get<std::string>(), item.at(1).get<double>()});
    }
    return out;
  }
  std::string model_id() const override { return inner_.model_id(); }
  bool deterministic() const override { return inner_.deterministic(); }

 private:
  LogProbProvider& inner_;
  DiskCache& cache_;
};

class CachedEmbeddingProvider : public EmbeddingProvider {
 public:
  CachedEmbeddingProvider(EmbeddingProvider& inner, DiskCache& cache)
      : inner_(inner), cache_(cache) {}

  std::vector<double> embed(std::string_view text) override {
    const auto key = DiskCache::make_key(inner_.model_id(), "embed", {text});
    const auto raw = cached_call(&cache_, key, [&] {
      return nlohmann::json(inner_.embed(text)).dump();
    });
    return nlohmann::json::parse(raw).get<std::vector<double>>();
  }
  std::string model_id() const override { return inner_.model_id(); }

 private:
  EmbeddingProvider& inner_;
  DiskCache& cache_;
};

class CachedChatProvider : public ChatProvider {
 public:
  CachedChatProvider(ChatProvider& inner, DiskCache& cache) : inner_(inner), cache_(cache) {}

  std::string complete(std::string_view prompt) override {
    const auto key = DiskCache::make_key(inner_.model_id(), "complete", {prompt});
    return cached_call(&cache_, key, [&] { return inner_.complete(prompt); });
  }
  std::string model_id() const override { return inner_.model_id(); }

 private:
  ChatProvider& inner_;
  DiskCache& cache_;
};

// ---------------------------------------------------------------------------
// Metrics over provider output

/// Conditional perplexity of a summary given its source, plus how the
/// source had to be shortened to fit the provider's context window.
struct ConditionalPerplexity {
  double value = 0.0;
  std::size_t token_count = 0;
  bool truncated = false;
  std::size_t source_bytes_used = 0;
};

namespace lm_detail {

/// Keeps roughly the last half of `text`, starting at a whitespace boundary
/// and never inside a UTF-8 sequence.
inline std::string_view keep_tail_half(std::string_view text) {
  std::size_t cut = text.size() / 2;
  while (cut < text.size() && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) ++cut;
  const auto ws = text.find_first_of(" \t\n", cut);
  if (ws != std::string_view::npos && ws + 1 < text.size()) cut = ws + 1;
  return text.substr(cut);
}

}  // namespace lm_detail

/// exp(-(1/|S|) sum log P(s_i | source, s_<i)) over the provider's tokens of
/// the summary. The provider context is the source followed by one newline.
/// When the provider reports a context overflow, the head of the source is
/// dropped (its tail is kept) and the call repeated.
inline ConditionalPerplexity conditional_perplexity(std::string_view source,
                                                    std::string_view summary,
                                                    LogProbProvider& provider,
                                                    int max_truncations = 16) {
  if (source.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    throw TextError("conditional perplexity: empty source");
  }
  if (summary.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    throw TextError("conditional perplexity: empty summary");
  }
  ConditionalPerplexity out;
  std::string_view kept = source;
  for (int attempt = 0;; ++attempt) {
    const std::string context = std::string(kept) + "\n";
    std::vector<TokenLogProb> tokens;
    try {
      tokens = provider.score_continuation(context, summary);
    } catch (const ProviderError& e) {
      if (e.kind() != ProviderErrorKind::kContextOverflow || attempt >= max_truncations) throw;
      const auto shorter = lm_detail::keep_tail_half(kept);
      if (shorter.empty() || shorter.size() == kept.size()) throw;
      spdlog::debug("context overflow; keeping last {} of {} source bytes", shorter.size(),
                    source.size());
      kept = shorter;
      out.truncated = true;
      continue;
    }
    if (tokens.empty()) {
      throw ProviderError(ProviderErrorKind::kEmptyContinuation,
                          "provider returned no tokens for the summary");
    }
    double nll = 0.0;
    for (const auto& t : tokens) {
      if (!std::isfinite(t.logprob) || t.logprob > 0.0) {
        throw ProviderError(ProviderErrorKind::kValidation,
                            "invalid log-probability " + std::to_string(t.logprob) +
                                " for token '" + t.token + "'");
      }
      nll -= t.logprob;
    }
    out.token_count = tokens.size();
    out.value = std::exp(nll / static_cast<double>(tokens.size()));
    out.source_bytes_used = kept.size();
    return out;
  }
}

/// v.w / (|v| |w|).
inline double cosine_similarity(std::span<const double> v, std::span<const double> w) {
  if (v.size() != w.size()) {
    throw Error("cosine similarity: dimension mismatch (" + std::to_string(v.size()) +
                " vs " + std::to_string(w.size()) + ")");
  }
  if (v.empty()) throw Error("cosine similarity of empty vectors");
  double dot = 0.0, nv = 0.0, nw = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]) || !std::isfinite(w[i])) {
      throw Error("cosine similarity: non-finite component");
    }
    dot += v[i] * w[i];
    nv += v[i] * v[i];
    nw += w[i] * w[i];
  }
  if (nv == 0.0 || nw == 0.0) throw Error("cosine similarity: zero vector");
  return std::clamp(dot / (std::sqrt(nv) * std::sqrt(nw)), -1.0, 1.0);
}

/// Cosine similarity between the embeddings of source and summary. Wrap the
/// provider in CachedEmbeddingProvider to reuse embeddings across calls.
inline double pair_similarity(std::string_view source, std::string_view summary,
                              EmbeddingProvider& provider) {
  const auto a = provider.embed(source);
  const auto b = provider.embed(summary);
  return cosine_similarity(a, b);
}

// ---------------------------------------------------------------------------
// HTTP providers (OpenAI-compatible endpoints)

struct HttpEndpoint {
  std::string base_url;  // e.g. "https://api.openai.com/v1"
  std::string model;
  std::string api_key;
  std::chrono::seconds timeout{120};
  RetryPolicy retry;
};

namespace lm_detail {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

inline SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("endpoint URL '" + url + "' has no scheme");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  if (path_start == std::string::npos) {
    out.origin = url;
  } else {
    out.origin = url.substr(0, path_start);
    out.prefix = url.substr(path_start);
    while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  }
  return out;
}

inline std::string redact(std::string text, const std::string& secret) {
  if (secret.empty()) return text;
  for (auto pos = text.find(secret); pos != std::string::npos; pos = text.find(secret, pos)) {
    text.replace(pos, secret.size(), "***");
  }
  return text;
}

inline bool mentions_context_overflow(const std::string& body) {
  std::string lower(body);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (const char* needle : {"context_length_exceeded", "context length", "maximum context",
                             "context window", "too many tokens", "prompt is too long"}) {
    if (lower.find(needle) != std::string::npos) return true;
  }
  return false;
}

/// Number of UTF-8 code points; OpenAI-style text offsets count characters.
inline std::size_t utf8_length(std::string_view s) {
  return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) {
    return (static_cast<unsigned char>(c) & 0xC0) != 0x80;
  }));
}

}  // namespace lm_detail

/// POSTs JSON to an endpoint and classifies failures into ProviderErrors.
class HttpJsonClient {
 public:
  explicit HttpJsonClient(HttpEndpoint endpoint)
      : endpoint_(std::move(endpoint)), url_(lm_detail::split_url(endpoint_.base_url)) {}

  nlohmann::json post(const std::string& path, const nlohmann::json& body) const {
    return with_retries(endpoint_.retry, [&] { return post_once(path, body); });
  }

  const HttpEndpoint& endpoint() const { return endpoint_; }

 private:
  nlohmann::json post_once(const std::string& path, const nlohmann::json& body) const {
    httplib::Client client(url_.origin);
    client.set_connection_timeout(std::chrono::seconds(10));
    client.set_read_timeout(endpoint_.timeout);
    client.set_write_timeout(endpoint_.timeout);
    httplib::Headers headers;
    if (!endpoint_.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + endpoint_.api_key);
    }
    const std::string full_path = url_.prefix + path;
    const std::string payload = body.dump();
    spdlog::debug("POST {}{} Authorization: Bearer *** body={}", url_.origin, full_path,
                  lm_detail::redact(payload, endpoint_.api_key));
    auto res = client.Post(full_path, headers, payload, "application/json");
    if (!res) {
      throw ProviderError(ProviderErrorKind::kTransport,
                          "POST " + url_.origin + full_path + ": " +
                              httplib::to_string(res.error()));
    }
    spdlog::debug("response {} body={}", res->status,
                  lm_detail::redact(res->body, endpoint_.api_key));
    const int status = res->status;
    if (status == 401 || status == 403) {
      throw ProviderError(ProviderErrorKind::kAuth, "HTTP " + std::to_string(status), status);
    }
    if (status == 429) {
      throw ProviderError(ProviderErrorKind::kRateLimited, "HTTP 429", status);
    }
    if (status >= 500) {
      throw ProviderError(ProviderErrorKind::kServer, "HTTP " + std::to_string(status), status);
    }
    if (status >= 400) {
      const auto kind = lm_detail::mentions_context_overflow(res->body)
                            ? ProviderErrorKind::kContextOverflow
                            : ProviderErrorKind::kValidation;
      throw ProviderError(kind, "HTTP " + std::to_string(status) + ": " + res->body.substr(0, 500),
                          status);
    }
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error& e) {
      throw ProviderError(ProviderErrorKind::kValidation,
                          std::string("response is not JSON: ") + e.what(), status);
    }
  }

  HttpEndpoint endpoint_;
  lm_detail::SplitUrl url_;
};

/// Completions endpoint with `echo` + `logprobs`: the prompt is scored and
/// the tokens overlapping the continuation are returned.
class HttpLogProbProvider : public LogProbProvider {
 public:
  explicit HttpLogProbProvider(HttpEndpoint endpoint) : client_(std::move(endpoint)) {}

  std::vector<TokenLogProb> score_continuation(std::string_view context,
                                               std::string_view continuation) override {
    const std::string prompt = std::string(context) + std::string(continuation);
    nlohmann::json body = {{"model", client_.endpoint().model},
                           {"prompt", prompt},
                           {"max_tokens", 1},
                           {"echo", true},
                           {"logprobs", 0},
                           {"temperature", 0}};
    const auto res = client_.post("/completions", body);
    try {
      const auto& lp = res.at("choices").at(0).at("logprobs");
      const auto& tokens = lp.at("tokens");
      const auto& logprobs = lp.at("token_logprobs");
      const auto& offsets = lp.at("text_offset");
      const std::size_t context_len = lm_detail::utf8_length(context);
      const std::size_t prompt_len = lm_detail::utf8_length(prompt);
      std::vector<TokenLogProb> out;
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto token = tokens.at(i).get<std::string>();
        const auto offset = offsets.at(i).get<std::size_t>();
        if (offset >= prompt_len) break;  // generated tail, not part of the prompt
        if (offset + lm_detail::utf8_length(token) <= context_len) continue;
        if (logprobs.at(i).is_null()) {
          throw ProviderError(ProviderErrorKind::kValidation,
                              "null logprob for continuation token '" + token + "'");
        }
        out.push_back({token, logprobs.at(i).get<double>()});
      }
      if (out.empty()) {
        throw ProviderError(ProviderErrorKind::kEmptyContinuation,
                            "no continuation tokens in provider response");
      }
      return out;
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(ProviderErrorKind::kValidation,
                          std::string("unexpected completions response: ") + e.what());
    }
  }
  std::string model_id() const override { return client_.endpoint().model; }

 private:
  HttpJsonClient client_;
};

class HttpEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit HttpEmbeddingProvider(HttpEndpoint endpoint) : client_(std::move(endpoint)) {}

  std::vector<double> embed(std::string_view text) override {
    nlohmann::json body = {{"model", client_.endpoint().model}, {"input", std::string(text)}};
    const auto res = client_.post("/embeddings", body);
    std::vector<double> v;
    try {
      v = res.at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(ProviderErrorKind::kValidation,
                          std::string("unexpected embeddings response: ") + e.what());
    }
    if (v.empty() || !std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); })) {
      throw ProviderError(ProviderErrorKind::kValidation, "empty or non-finite embedding");
    }
    std::lock_guard lock(dim_mu_);
    if (dimension_ == 0) {
      dimension_ = v.size();
    } else if (v.size() != dimension_) {
      throw ProviderError(ProviderErrorKind::kValidation,
                          "embedding dimension changed from " + std::to_string(dimension_) +
                              " to " + std::to_string(v.size()));
    }
    return v;
  }
  std::string model_id() const override { return client_.endpoint().model; }

 private:
  HttpJsonClient client_;
  std::mutex dim_mu_;
  std::size_t dimension_ = 0;
};

class HttpChatProvider : public ChatProvider {
 public:
  explicit HttpChatProvider(HttpEndpoint endpoint, std::optional<long> seed = std::nullopt)
      : client_(std::move(endpoint)), seed_(seed) {}

  std::string complete(std::string_view prompt) override {
    nlohmann::json body = {
        {"model", client_.endpoint().model},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", std::string(prompt)}}})},
        {"temperature", 0}};
    if (seed_) body["seed"] = *seed_;
    const auto res = client_.post("/chat/completions", body);
    try {
      return res.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(ProviderErrorKind::kValidation,
                          std::string("unexpected chat response: ") + e.what());
    }
  }
  std::string model_id() const override { return client_.endpoint().model; }

 private:
  HttpJsonClient client_;
  std::optional<long> seed_;
};

}  // namespace sumfeat
