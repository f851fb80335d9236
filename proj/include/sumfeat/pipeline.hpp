#pragma once

// End-to-end commands behind the CLI: feature extraction, correlation
// tables, LOWESS curves, judging and alignment reports. The CLI only parses
// arguments; all numbers come from the modules unchanged.

#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "json.hpp"
#include "sumfeat/common.hpp"
#include "sumfeat/corpus.hpp"
#include "sumfeat/infometrics.hpp"
#include "sumfeat/io.hpp"
#include "sumfeat/judge.hpp"
#include "sumfeat/lmclients.hpp"
#include "sumfeat/parallel.hpp"
#include "sumfeat/stats.hpp"
#include "sumfeat/stubs.hpp"
#include "sumfeat/textstats.hpp"

namespace sumfeat {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,          // validation or configuration error
  kExitPartialFailure = 2,  // some provider calls failed; outputs written
  kExitFatal = 3,
};

inline const std::vector<std::string>& all_feature_names() {
  static const std::vector<std::string> kNames = {
      "flesch_reading_ease", "automated_readability_index", "flesch_kincaid_grade",
      "gunning_fog",         "smog_index",                  "dale_chall",
      "lexicon_count",       "difficult_words",             "syllable_count",
      "entropy",             "perplexity",                  "gini_index",
      "conditional_perplexity", "cosine_similarity"};
  return kNames;
}

inline bool is_provider_feature(std::string_view name) {
  return name == "conditional_perplexity" || name == "cosine_similarity";
}

// ---------------------------------------------------------------------------
// Configuration

struct ProviderConfig {
  std::string kind = "stub";  // "stub" or "http"
  std::string endpoint;
  std::string model;
  std::string api_key;
  std::string api_key_env;
  std::optional<long> seed;
  int timeout_seconds = 120;
};

struct RunConfig {
  std::filesystem::path corpus_path;
  std::filesystem::path output_dir = "out";
  std::filesystem::path cache_dir;  // defaults to <output_dir>/cache
  std::filesystem::path familiar_words_path = default_familiar_words_path();
  std::optional<std::filesystem::path> templates_dir;
  std::size_t concurrency = 4;
  LowessOptions lowess;
  std::size_t lowess_bins = 0;  // 0 = fit raw points
  std::vector<std::string> features = all_feature_names();
  ProviderConfig logprob{"stub", "", "", "", "SUMFEAT_LOGPROB_API_KEY", {}, 120};
  ProviderConfig embedding{"stub", "", "", "", "SUMFEAT_EMBEDDING_API_KEY", {}, 120};
  ProviderConfig judge{"stub", "", "", "", "SUMFEAT_JUDGE_API_KEY", {}, 120};

  std::filesystem::path effective_cache_dir() const {
    return cache_dir.empty() ? output_dir / "cache" : cache_dir;
  }
};

namespace pipeline_detail {

inline std::filesystem::path resolve(const std::filesystem::path& base,
                                     const std::filesystem::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return (base / p).lexically_normal();
}

inline ProviderConfig parse_provider(const nlohmann::json& j, ProviderConfig def) {
  if (j.contains("kind")) def.kind = j.at("kind").get<std::string>();
  if (def.kind != "stub" && def.kind != "http") {
    throw ConfigError("provider kind must be 'stub' or 'http', got '" + def.kind + "'");
  }
  if (j.contains("endpoint")) def.endpoint = j.at("endpoint").get<std::string>();
  if (j.contains("model")) def.model = j.at("model").get<std::string>();
  if (j.contains("api_key")) def.api_key = j.at("api_key").get<std::string>();
  if (j.contains("api_key_env")) def.api_key_env = j.at("api_key_env").get<std::string>();
  if (j.contains("seed")) def.seed = j.at("seed").get<long>();
  if (j.contains("timeout_seconds")) def.timeout_seconds = j.at("timeout_seconds").get<int>();
  return def;
}

inline void apply_env(ProviderConfig& p) {
  if (p.api_key_env.empty()) return;
  if (const char* v = std::getenv(p.api_key_env.c_str()); v != nullptr && *v != '\0') {
    p.api_key = v;
  }
}

inline nlohmann::ordered_json provider_json(const ProviderConfig& p) {
  nlohmann::ordered_json j;
  j["kind"] = p.kind;
  j["endpoint"] = p.endpoint;
  j["model"] = p.model;
  j["api_key_env"] = p.api_key_env;
  j["api_key_set"] = !p.api_key.empty();
  if (p.seed) j["seed"] = *p.seed;
  return j;
}

}  // namespace pipeline_detail

/// Parses a JSON config. Relative paths resolve against `base_dir`.
/// Provider API keys may come from the file or, overriding it, from the
/// environment variable named by `api_key_env`.
inline RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  using pipeline_detail::resolve;
  RunConfig c;
  try {
    if (j.contains("corpus")) c.corpus_path = resolve(base_dir, j.at("corpus").get<std::string>());
    if (j.contains("output_dir")) {
      c.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
    }
    if (j.contains("cache_dir")) c.cache_dir = resolve(base_dir, j.at("cache_dir").get<std::string>());
    if (j.contains("familiar_words")) {
      c.familiar_words_path = resolve(base_dir, j.at("familiar_words").get<std::string>());
    }
    if (j.contains("templates_dir")) {
      c.templates_dir = resolve(base_dir, j.at("templates_dir").get<std::string>());
    }
    if (j.contains("concurrency")) c.concurrency = j.at("concurrency").get<std::size_t>();
    if (j.contains("features")) c.features = j.at("features").get<std::vector<std::string>>();
    if (j.contains("lowess")) {
      const auto& l = j.at("lowess");
      if (l.contains("fraction")) c.lowess.fraction = l.at("fraction").get<double>();
      if (l.contains("iterations")) c.lowess.iterations = l.at("iterations").get<int>();
      if (l.contains("bins")) c.lowess_bins = l.at("bins").get<std::size_t>();
    }
    if (j.contains("providers")) {
      const auto& p = j.at("providers");
      if (p.contains("logprob")) c.logprob = pipeline_detail::parse_provider(p.at("logprob"), c.logprob);
      if (p.contains("embedding")) {
        c.embedding = pipeline_detail::parse_provider(p.at("embedding"), c.embedding);
      }
      if (p.contains("judge")) c.judge = pipeline_detail::parse_provider(p.at("judge"), c.judge);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  pipeline_detail::apply_env(c.logprob);
  pipeline_detail::apply_env(c.embedding);
  pipeline_detail::apply_env(c.judge);
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(j, path.has_parent_path() ? path.parent_path() : ".");
}

/// Canonical JSON of the configuration, without secrets.
inline nlohmann::ordered_json config_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["corpus"] = c.corpus_path.string();
  j["output_dir"] = c.output_dir.string();
  j["cache_dir"] = c.effective_cache_dir().string();
  j["familiar_words"] = c.familiar_words_path.string();
  j["templates_dir"] = c.templates_dir ? c.templates_dir->string() : "";
  j["concurrency"] = c.concurrency;
  j["features"] = c.features;
  j["lowess"] = {{"fraction", c.lowess.fraction},
                 {"iterations", c.lowess.iterations},
                 {"bins", c.lowess_bins}};
  j["providers"] = {{"logprob", pipeline_detail::provider_json(c.logprob)},
                    {"embedding", pipeline_detail::provider_json(c.embedding)},
                    {"judge", pipeline_detail::provider_json(c.judge)}};
  return j;
}

inline std::string config_hash(const RunConfig& c) { return sha256_hex(config_json(c).dump()); }

namespace pipeline_detail {

inline void require_provider(const ProviderConfig& p, std::string_view role) {
  if (p.kind != "http") return;
  if (p.endpoint.empty()) {
    throw ConfigError(std::string(role) + " provider: 'endpoint' is required for kind http");
  }
  if (p.model.empty()) {
    throw ConfigError(std::string(role) + " provider: 'model' is required for kind http");
  }
  if (p.api_key.empty()) {
    throw ConfigError(std::string(role) + " provider: no API key (set " +
                      (p.api_key_env.empty() ? std::string("api_key") : p.api_key_env) + ")");
  }
  lm_detail::split_url(p.endpoint);
}

inline HttpEndpoint endpoint_of(const ProviderConfig& p) {
  HttpEndpoint e;
  e.base_url = p.endpoint;
  e.model = p.model;
  e.api_key = p.api_key;
  e.timeout = std::chrono::seconds(p.timeout_seconds);
  return e;
}

}  // namespace pipeline_detail

inline std::unique_ptr<LogProbProvider> make_logprob_provider(const ProviderConfig& p) {
  pipeline_detail::require_provider(p, "logprob");
  if (p.kind == "stub") return std::make_unique<StubLogProbProvider>();
  return std::make_unique<HttpLogProbProvider>(pipeline_detail::endpoint_of(p));
}

inline std::unique_ptr<EmbeddingProvider> make_embedding_provider(const ProviderConfig& p) {
  pipeline_detail::require_provider(p, "embedding");
  if (p.kind == "stub") return std::make_unique<StubEmbeddingProvider>();
  return std::make_unique<HttpEmbeddingProvider>(pipeline_detail::endpoint_of(p));
}

inline std::unique_ptr<ChatProvider> make_chat_provider(const ProviderConfig& p) {
  pipeline_detail::require_provider(p, "judge");
  if (p.kind == "stub") return std::make_unique<StubChatProvider>();
  return std::make_unique<HttpChatProvider>(pipeline_detail::endpoint_of(p), p.seed);
}

// ---------------------------------------------------------------------------
// Tables on disk

/// Renders a number with 10 significant digits.
inline std::string format_number(double v) { return fmt::format("{:.10g}", v); }

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

/// Splits one CSV line (RFC 4180 quoting, no embedded newlines).
inline std::vector<std::string> parse_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

/// Ordered `key: value` lines written as `# key: value` before the CSV header.
using Metadata = std::vector<std::pair<std::string, std::string>>;

inline std::string render_metadata(const Metadata& meta) {
  std::string out;
  for (const auto& [k, v] : meta) out += "# " + k + ": " + v + "\n";
  return out;
}

/// Metadata every output starts with.
inline Metadata base_metadata(const RunConfig& c, std::string_view command) {
  std::string templates;
  for (Dimension d : kAllDimensions) {
    if (!templates.empty()) templates += ",";
    templates += c.templates_dir ? "dir:" + c.templates_dir->string() + "/" +
                                       std::string(to_string(d)) + ".txt"
                                 : builtin_template(d).template_id;
  }
  auto model_of = [](const ProviderConfig& p, std::string_view stub) {
    return p.kind == "stub" ? std::string(stub) : p.model;
  };
  return {{"tool", "sumfeat " + std::string(kVersion)},
          {"command", std::string(command)},
          {"config-hash", config_hash(c)},
          {"config", config_json(c).dump()},
          {"templates", templates},
          {"providers", "logprob=" + model_of(c.logprob, "stub-logprob-v1") +
                            ",embedding=" + model_of(c.embedding, "stub-embed-v1") +
                            ",judge=" + model_of(c.judge, "stub-judge-v1")}};
}

/// Per-record features and ratings. Rater columns are named
/// "<rater>:<dimension>"; failed provider cells hold no value.
struct FeatureTable {
  Metadata metadata;
  std::vector<std::string> record_ids;
  std::vector<std::string> feature_names;
  std::vector<std::vector<std::optional<double>>> features;  // [record][feature]
  std::vector<std::string> rater_columns;
  std::vector<std::vector<double>> ratings;  // [record][rater column]

  std::size_t feature_index(std::string_view name) const {
    for (std::size_t i = 0; i < feature_names.size(); ++i) {
      if (feature_names[i] == name) return i;
    }
    throw ConfigError("feature '" + std::string(name) + "' not in table");
  }
  std::size_t rater_index(std::string_view column) const {
    for (std::size_t i = 0; i < rater_columns.size(); ++i) {
      if (rater_columns[i] == column) return i;
    }
    throw ConfigError("rater column '" + std::string(column) + "' not in table");
  }
};

inline constexpr std::string_view kFailedCell = "error";
inline constexpr std::string_view kUndefinedCell = "undefined";

inline std::string render_feature_table(const FeatureTable& t) {
  std::string out = render_metadata(t.metadata);
  out += "record_id";
  for (const auto& f : t.feature_names) out += "," + f;
  for (const auto& r : t.rater_columns) out += "," + csv_field(r);
  out += "\n";
  for (std::size_t i = 0; i < t.record_ids.size(); ++i) {
    out += csv_field(t.record_ids[i]);
    for (const auto& v : t.features[i]) {
      out += ",";
      out += v ? format_number(*v) : std::string(kFailedCell);
    }
    for (double v : t.ratings[i]) out += "," + format_number(v);
    out += "\n";
  }
  return out;
}

inline FeatureTable parse_feature_table(std::string_view text) {
  FeatureTable t;
  bool header_seen = false;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  std::vector<bool> is_rater;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (header_seen) continue;
      auto body = line.substr(1);
      if (!body.empty() && body.front() == ' ') body.remove_prefix(1);
      const auto colon = body.find(": ");
      if (colon != std::string_view::npos) {
        t.metadata.emplace_back(std::string(body.substr(0, colon)),
                                std::string(body.substr(colon + 2)));
      }
      continue;
    }
    auto fields = parse_csv_line(line);
    if (!header_seen) {
      if (fields.empty() || fields[0] != "record_id") {
        throw ConfigError("feature table header must start with record_id");
      }
      for (std::size_t i = 1; i < fields.size(); ++i) {
        const bool rater = fields[i].find(':') != std::string::npos;
        is_rater.push_back(rater);
        (rater ? t.rater_columns : t.feature_names).push_back(fields[i]);
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != is_rater.size() + 1) {
      throw ConfigError("feature table line " + std::to_string(line_no) + " has " +
                        std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(is_rater.size() + 1));
    }
    t.record_ids.push_back(fields[0]);
    std::vector<std::optional<double>> feats;
    std::vector<double> rates;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      std::optional<double> v;
      if (fields[i] != kFailedCell) {
        try {
          std::size_t used = 0;
          v = std::stod(fields[i], &used);
          if (used != fields[i].size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
          throw ConfigError("feature table line " + std::to_string(line_no) +
                            ": bad number '" + fields[i] + "'");
        }
      }
      if (is_rater[i - 1]) {
        if (!v) throw ConfigError("feature table line " + std::to_string(line_no) + ": missing rating");
        rates.push_back(*v);
      } else {
        feats.push_back(v);
      }
    }
    t.features.push_back(std::move(feats));
    t.ratings.push_back(std::move(rates));
  }
  if (!header_seen) throw ConfigError("feature table has no header");
  return t;
}

// ---------------------------------------------------------------------------
// extract

struct CommandOutcome {
  int exit_code = kExitOk;
  std::vector<std::filesystem::path> files;
  std::vector<std::string> warnings;
};

struct ExtractOptions {
  /// Injected providers take precedence over the config (used by tests).
  LogProbProvider* logprob = nullptr;
  EmbeddingProvider* embedding = nullptr;
  std::filesystem::path output_file;  // default <output_dir>/features.csv
};

/// Computes the selected features for every record of the corpus.
inline FeatureTable extract_features(const Corpus& corpus, const RunConfig& config,
                                     LogProbProvider* logprob, EmbeddingProvider* embedding,
                                     std::vector<std::string>* warnings = nullptr) {
  const auto& names = config.features;
  std::map<std::string, std::size_t, std::less<>> col;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (std::find(all_feature_names().begin(), all_feature_names().end(), names[i]) ==
        all_feature_names().end()) {
      throw ConfigError("unknown feature '" + names[i] + "'");
    }
    if (!col.emplace(names[i], i).second) throw ConfigError("duplicate feature '" + names[i] + "'");
  }
  const bool want_cp = col.count("conditional_perplexity") > 0;
  const bool want_cos = col.count("cosine_similarity") > 0;
  if (want_cp && logprob == nullptr) throw ConfigError("conditional_perplexity needs a logprob provider");
  if (want_cos && embedding == nullptr) throw ConfigError("cosine_similarity needs an embedding provider");

  const auto familiar = FamiliarWords::load(config.familiar_words_path);
  FeatureTable t;
  t.feature_names = names;
  t.features.assign(corpus.size(), std::vector<std::optional<double>>(names.size()));
  std::size_t short_smog = 0;

  auto set = [&](std::size_t row, std::string_view name, double v) {
    if (auto it = col.find(name); it != col.end()) t.features[row][it->second] = v;
  };
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& r = corpus.records[i];
    t.record_ids.push_back(r.record_id);
    const auto tokens = tokenize(r.summary_text);
    const auto p = readability_profile(tokens, familiar);
    if (p.smog_short_sample) ++short_smog;
    set(i, "flesch_reading_ease", p.flesch_reading_ease);
    set(i, "automated_readability_index", p.automated_readability_index);
    set(i, "flesch_kincaid_grade", p.flesch_kincaid_grade);
    set(i, "gunning_fog", p.gunning_fog);
    set(i, "smog_index", p.smog_index);
    set(i, "dale_chall", p.dale_chall);
    set(i, "lexicon_count", static_cast<double>(p.lexicon_count));
    set(i, "difficult_words", static_cast<double>(p.difficult_words));
    set(i, "syllable_count", static_cast<double>(p.syllable_count));
    const auto dist = unigram_distribution(tokens);
    set(i, "entropy", entropy(dist));
    set(i, "perplexity", unigram_perplexity(tokens, dist));
    set(i, "gini_index", gini_index(dist));
  }

  std::vector<std::string> errors(corpus.size());
  std::vector<char> truncated(corpus.size(), 0);
  if (want_cp || want_cos) {
    std::mutex error_mu;
    parallel_for(corpus.size(), config.concurrency, [&](std::size_t i) {
      const auto& r = corpus.records[i];
      if (want_cp) {
        try {
          const auto cp = conditional_perplexity(r.source_text, r.summary_text, *logprob);
          t.features[i][col.at("conditional_perplexity")] = cp.value;
          truncated[i] = cp.truncated ? 1 : 0;
        } catch (const ProviderError& e) {
          if (e.kind() == ProviderErrorKind::kAuth) throw;
          std::lock_guard lock(error_mu);
          errors[i] += "conditional_perplexity: " + std::string(e.what()) + "; ";
        }
      }
      if (want_cos) {
        try {
          t.features[i][col.at("cosine_similarity")] =
              pair_similarity(r.source_text, r.summary_text, *embedding);
        } catch (const ProviderError& e) {
          if (e.kind() == ProviderErrorKind::kAuth) throw;
          std::lock_guard lock(error_mu);
          errors[i] += "cosine_similarity: " + std::string(e.what()) + "; ";
        }
      }
    });
  }

  // Ratings: human means and every judge variant present on all records.
  for (Dimension d : kAllDimensions) {
    const bool human_complete = std::all_of(
        corpus.records.begin(), corpus.records.end(), [&](const SummaryRecord& r) {
          auto it = r.human_ratings.find(d);
          return it != r.human_ratings.end() && !it->second.empty();
        });
    if (human_complete) t.rater_columns.push_back("human:" + std::string(to_string(d)));
    for (const auto& j : complete_judges(corpus, d)) {
      t.rater_columns.push_back(j + ":" + std::string(to_string(d)));
    }
  }
  t.ratings.assign(corpus.size(), {});
  for (const auto& column : t.rater_columns) {
    const auto colon = column.rfind(':');
    const auto rv = rater_vector(corpus, column.substr(0, colon),
                                 parse_dimension(column.substr(colon + 1)));
    for (std::size_t i = 0; i < corpus.size(); ++i) t.ratings[i].push_back(rv.values[i]);
  }

  std::string truncated_ids;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (truncated[i]) truncated_ids += (truncated_ids.empty() ? "" : " ") + corpus.records[i].record_id;
    if (!errors[i].empty()) {
      ++failures;
      if (warnings) warnings->push_back(corpus.records[i].record_id + ": " + errors[i]);
    }
  }
  t.metadata = base_metadata(config, "extract");
  t.metadata.emplace_back("corpus-records", std::to_string(corpus.size()));
  t.metadata.emplace_back("difficult-word-rule", std::string(kDifficultWordRule));
  t.metadata.emplace_back("unigram-estimation", std::string(kUnigramEstimation));
  t.metadata.emplace_back("unigram-text", "summary");
  t.metadata.emplace_back("smog-short-sample-records",
                          std::to_string(short_smog) + " (fewer than 30 sentences)");
  t.metadata.emplace_back("conditional-perplexity-context", "source + \"\\n\" + summary");
  t.metadata.emplace_back("truncated-sources", truncated_ids.empty() ? "none" : truncated_ids);
  t.metadata.emplace_back("failed-records", std::to_string(failures));
  return t;
}

inline CommandOutcome cmd_extract(const RunConfig& config, const ExtractOptions& opts = {}) {
  // Everything is validated before any provider is called.
  const auto corpus = load_corpus(config.corpus_path);
  const bool want_cp = std::find(config.features.begin(), config.features.end(),
                                 "conditional_perplexity") != config.features.end();
  const bool want_cos = std::find(config.features.begin(), config.features.end(),
                                  "cosine_similarity") != config.features.end();
  std::unique_ptr<LogProbProvider> lp_owned;
  std::unique_ptr<EmbeddingProvider> emb_owned;
  LogProbProvider* lp = opts.logprob;
  EmbeddingProvider* emb = opts.embedding;
  if (want_cp && lp == nullptr) {
    lp_owned = make_logprob_provider(config.logprob);
    lp = lp_owned.get();
  }
  if (want_cos && emb == nullptr) {
    emb_owned = make_embedding_provider(config.embedding);
    emb = emb_owned.get();
  }
  FamiliarWords::load(config.familiar_words_path);

  DiskCache cache(config.effective_cache_dir());
  std::optional<CachedLogProbProvider> lp_cached;
  std::optional<CachedEmbeddingProvider> emb_cached;
  if (lp) lp = &lp_cached.emplace(*lp, cache);
  if (emb) emb = &emb_cached.emplace(*emb, cache);

  CommandOutcome out;
  const auto table = extract_features(corpus, config, lp, emb, &out.warnings);
  const auto path =
      opts.output_file.empty() ? config.output_dir / "features.csv" : opts.output_file;
  write_file_atomic(path, render_feature_table(table));
  out.files.push_back(path);
  if (!out.warnings.empty()) out.exit_code = kExitPartialFailure;
  return out;
}

// ---------------------------------------------------------------------------
// correlate

/// Feature vectors and per-dimension rating vectors of a feature table.
/// Failed cells become NaN, which correlation_table reports as undefined.
inline std::vector<FeatureVector> table_features(const FeatureTable& t,
                                                 const std::vector<std::string>& selection) {
  std::vector<FeatureVector> out;
  const auto& names = selection.empty() ? t.feature_names : selection;
  for (const auto& name : names) {
    const auto idx = t.feature_index(name);
    FeatureVector f{name, {}};
    for (const auto& row : t.features) {
      f.values.push_back(row[idx] ? *row[idx] : std::numeric_limits<double>::quiet_NaN());
    }
    out.push_back(std::move(f));
  }
  return out;
}

inline std::vector<RatingVector> table_ratings(const FeatureTable& t, Dimension d) {
  std::vector<RatingVector> out;
  const std::string suffix = ":" + std::string(to_string(d));
  for (std::size_t c = 0; c < t.rater_columns.size(); ++c) {
    const auto& col = t.rater_columns[c];
    if (col.size() <= suffix.size() || col.compare(col.size() - suffix.size(), suffix.size(), suffix) != 0) {
      continue;
    }
    RatingVector rv{d, col.substr(0, col.size() - suffix.size()), {}};
    for (const auto& row : t.ratings) rv.values.push_back(row[c]);
    out.push_back(std::move(rv));
  }
  return out;
}

inline std::string render_correlation_matrix(const CorrelationTable& table, bool p_values,
                                             const Metadata& meta) {
  std::string out = render_metadata(meta);
  out += "feature";
  for (const auto& c : table.columns) out += "," + csv_field(c);
  out += "\n";
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    out += table.rows[r];
    for (const auto& cell : table.cells[r]) {
      out += ",";
      if (!cell.defined) {
        out += kUndefinedCell;
      } else {
        out += format_number(p_values ? cell.p_value : cell.coefficient);
      }
    }
    out += "\n";
  }
  return out;
}

struct CorrelateOptions {
  std::filesystem::path table_path;  // default <output_dir>/features.csv
  std::string sort_key = "human";
  std::vector<Dimension> dimensions = {kAllDimensions.begin(), kAllDimensions.end()};
  std::vector<std::string> features;  // empty = all in table
};

inline CommandOutcome cmd_correlate(const RunConfig& config, const CorrelateOptions& opts) {
  const auto path = opts.table_path.empty() ? config.output_dir / "features.csv" : opts.table_path;
  const auto table = parse_feature_table(read_file(path));
  if (table.record_ids.size() < 3) throw ConfigError("correlate needs at least 3 rows");
  const auto features = table_features(table, opts.features);
  CommandOutcome out;
  for (Dimension d : opts.dimensions) {
    const auto ratings = table_ratings(table, d);
    if (ratings.empty()) {
      throw ConfigError("feature table has no " + std::string(to_string(d)) + " ratings");
    }
    // Raters also appear as rows, so the matrix shows rater/rater agreement.
    auto rows = features;
    for (const auto& r : ratings) rows.push_back({r.rater_id, r.values});
    for (const auto& t : correlation_tables(rows, ratings, opts.sort_key)) {
      const std::string dim(to_string(d));
      const std::string method(to_string(t.method));
      auto meta = base_metadata(config, "correlate");
      meta.emplace_back("input", path.string());
      meta.emplace_back("input-sha256", sha256_hex(read_file(path)));
      meta.emplace_back("dimension", dim);
      meta.emplace_back("method", method);
      meta.emplace_back("sort-key", opts.sort_key);
      meta.emplace_back("n", std::to_string(table.record_ids.size()));
      meta.emplace_back("significance-threshold", "0.05");
      for (bool p : {false, true}) {
        const auto file = config.output_dir /
                          fmt::format("{}_{}_{}.csv", p ? "pvalues" : "correlation", dim, method);
        auto m = meta;
        m.emplace_back("values", p ? "two-sided p-value" : "coefficient");
        write_file_atomic(file, render_correlation_matrix(t, p, m));
        out.files.push_back(file);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// lowess

struct LowessCommandOptions {
  std::filesystem::path table_path;
  std::string feature;
  std::string rater = "human";
  Dimension dimension = Dimension::kRelevance;
  std::filesystem::path output_file;  // default <output_dir>/lowess_<feature>_<rater>_<dim>.csv
};

/// (x, y_raw, y_fitted) triples sorted by (x, y).
inline std::string render_lowess_curve(std::span<const double> x, std::span<const double> y,
                                       std::span<const double> fitted, const Metadata& meta) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b];
  });
  std::string out = render_metadata(meta);
  out += "x,y_raw,y_fitted\n";
  for (auto i : order) {
    out += format_number(x[i]) + "," + format_number(y[i]) + "," + format_number(fitted[i]) + "\n";
  }
  return out;
}

inline CommandOutcome cmd_lowess(const RunConfig& config, const LowessCommandOptions& opts) {
  const auto path = opts.table_path.empty() ? config.output_dir / "features.csv" : opts.table_path;
  const auto table = parse_feature_table(read_file(path));
  const auto fi = table.feature_index(opts.feature);
  const auto ri = table.rater_index(opts.rater + ":" + std::string(to_string(opts.dimension)));
  std::vector<double> x, y;
  for (std::size_t i = 0; i < table.record_ids.size(); ++i) {
    if (!table.features[i][fi]) {
      throw ConfigError("feature '" + opts.feature + "' has a failed cell for record '" +
                        table.record_ids[i] + "'");
    }
    x.push_back(*table.features[i][fi]);
    y.push_back(table.ratings[i][ri]);
  }
  if (x.size() < 5) throw ConfigError("lowess needs at least 5 rows");
  if (config.lowess_bins > 0) std::tie(x, y) = quantile_bins(x, y, config.lowess_bins);
  const auto fitted = lowess(x, y, config.lowess.fraction, config.lowess.iterations);

  auto meta = base_metadata(config, "lowess");
  meta.emplace_back("input-sha256", sha256_hex(read_file(path)));
  meta.emplace_back("feature", opts.feature);
  meta.emplace_back("rater", opts.rater);
  meta.emplace_back("dimension", std::string(to_string(opts.dimension)));
  meta.emplace_back("fraction", format_number(config.lowess.fraction));
  meta.emplace_back("iterations", std::to_string(config.lowess.iterations));
  meta.emplace_back("bins", config.lowess_bins == 0 ? "none" : std::to_string(config.lowess_bins));
  const auto file = opts.output_file.empty()
                        ? config.output_dir / fmt::format("lowess_{}_{}_{}.csv", opts.feature,
                                                          opts.rater, to_string(opts.dimension))
                        : opts.output_file;
  write_file_atomic(file, render_lowess_curve(x, y, fitted, meta));
  return {kExitOk, {file}, {}};
}

// ---------------------------------------------------------------------------
// judge

struct JudgeCommandOptions {
  Dimension dimension = Dimension::kRelevance;
  bool hint = false;
  std::filesystem::path corpus_out;  // default <output_dir>/corpus_rated.jsonl
  ChatProvider* provider = nullptr;  // injected (tests); else from config
};

inline std::string path_safe(std::string_view s) {
  std::string out;
  for (char c : s) {
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' || c == '_'
                      ? c
                      : '_');
  }
  return out;
}

inline CommandOutcome cmd_judge(const RunConfig& config, const JudgeCommandOptions& opts) {
  auto corpus = load_corpus(config.corpus_path);
  std::unique_ptr<ChatProvider> owned;
  ChatProvider* provider = opts.provider;
  if (provider == nullptr) {
    owned = make_chat_provider(config.judge);
    provider = owned.get();
  }
  JudgeOptions jopts;
  jopts.concurrency = config.concurrency;
  if (config.templates_dir) jopts.prompt_template = load_template(*config.templates_dir, opts.dimension);
  DiskCache cache(config.effective_cache_dir());
  jopts.cache = &cache;

  const auto hint = opts.hint ? std::optional<HintSpec>(default_hint(opts.dimension)) : std::nullopt;
  const auto results = judge_corpus(corpus, opts.dimension, hint, *provider, jopts);

  const auto variant = judge_variant_id(provider->model_id(), opts.hint);
  const auto raw_dir = config.output_dir / "raw" / path_safe(variant);
  CommandOutcome out;
  for (const auto& r : results) {
    write_file_atomic(raw_dir / (r.prompt_hash + ".txt"), r.raw_response);
    if (!r.error.empty()) out.warnings.push_back(r.record_id + ": " + r.error);
  }
  const auto results_file = config.output_dir / fmt::format("judge_{}_{}.jsonl", path_safe(variant),
                                                            to_string(opts.dimension));
  auto meta = base_metadata(config, "judge");
  meta.emplace_back("judge-variant", variant);
  meta.emplace_back("dimension", std::string(to_string(opts.dimension)));
  meta.emplace_back("template", jopts.prompt_template ? jopts.prompt_template->template_id
                                                      : builtin_template(opts.dimension).template_id);
  meta.emplace_back("temperature", "0");
  meta.emplace_back("samples-per-record", "1");
  meta.emplace_back("judge-deterministic",
                    config.judge.kind == "stub" ? "yes" : "not guaranteed (remote model)");
  // Line-delimited output: the metadata header is one JSON object line.
  nlohmann::ordered_json header;
  for (const auto& [k, v] : meta) header["_meta"][k] = v;
  write_file_atomic(results_file, header.dump() + "\n" + judge_results_jsonl(results, raw_dir));
  out.files.push_back(results_file);

  const auto rated = apply_judge_results(std::move(corpus), results);
  const auto corpus_out =
      opts.corpus_out.empty() ? config.output_dir / "corpus_rated.jsonl" : opts.corpus_out;
  save_corpus(rated, corpus_out);
  out.files.push_back(corpus_out);
  if (!out.warnings.empty()) out.exit_code = kExitPartialFailure;
  return out;
}

// ---------------------------------------------------------------------------
// report

struct ReportOptions {
  std::vector<JudgeVariant> variants;
  std::vector<Dimension> dimensions = {kAllDimensions.begin(), kAllDimensions.end()};
};

inline std::string render_alignment_csv(const AlignmentReport& report, const Metadata& meta) {
  std::string out = render_metadata(meta);
  out += "judge_id,hint,dimension,method,coefficient,p_value,n\n";
  for (const auto& row : report.rows) {
    for (const auto* cell : {&row.pearson, &row.spearman, &row.kendall}) {
      out += csv_field(row.variant.judge_id) + "," + (row.variant.hint ? "true" : "false") + "," +
             std::string(to_string(row.dimension)) + "," + std::string(to_string(cell->method)) +
             "," + (cell->defined ? format_number(cell->coefficient) : std::string(kUndefinedCell)) +
             "," + (cell->defined ? format_number(cell->p_value) : std::string(kUndefinedCell)) +
             "," + std::to_string(cell->n) + "\n";
    }
  }
  return out;
}

inline CommandOutcome cmd_report(const RunConfig& config, const ReportOptions& opts) {
  if (opts.variants.empty()) throw ConfigError("report needs at least one judge variant");
  const auto corpus = load_corpus(config.corpus_path);
  const auto report = alignment_report(corpus, opts.variants, opts.dimensions);
  auto meta = base_metadata(config, "report");
  meta.emplace_back("corpus-sha256", sha256_hex(read_file(config.corpus_path)));
  meta.emplace_back("reference", "human (mean of annotators)");
  const auto txt = config.output_dir / "alignment_report.txt";
  const auto csv = config.output_dir / "alignment_report.csv";
  write_file_atomic(txt, render_metadata(meta) + format_alignment_table(report));
  write_file_atomic(csv, render_alignment_csv(report, meta));
  return {kExitOk, {txt, csv}, {}};
}

}  // namespace sumfeat
