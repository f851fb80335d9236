#pragma once

// LLM-as-judge: chain-of-thought evaluation prompts per dimension, the
// optional metric "Hint" section, score parsing, corpus-wide judging and
// judge-vs-human alignment reports.

#include <filesystem>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "json.hpp"
#include "sumfeat/common.hpp"
#include "sumfeat/corpus.hpp"
#include "sumfeat/io.hpp"
#include "sumfeat/lmclients.hpp"
#include "sumfeat/parallel.hpp"
#include "sumfeat/stats.hpp"

namespace sumfeat {

class JudgeError : public Error {
 public:
  using Error::Error;
};

/// Score extraction failed; carries the response for audit.
class ScoreParseError : public JudgeError {
 public:
  ScoreParseError(const std::string& what, std::string raw)
      : JudgeError(what), raw_response_(std::move(raw)) {}
  const std::string& raw_response() const { return raw_response_; }

 private:
  std::string raw_response_;
};

/// Metric hint for one dimension. `hint_text` is the body rendered under
/// the "Hint:" label.
struct HintSpec {
  Dimension dimension;
  std::string hint_text;
};

inline constexpr std::string_view kRelevanceHint =
    "These metrics are important for evaluation:\n"
    "- for summary: entropy, perplexity, Gini index, syllable count, lexicon count, "
    "difficult words\n"
    "- cosine similarity between source and summary";

inline constexpr std::string_view kCoherenceHint =
    "These metrics are important for evaluation of summary: perplexity, flesch kincaid "
    "grade, gunning fog, automated readability index, entropy, smog index";

inline HintSpec default_hint(Dimension d) {
  return {d, std::string(d == Dimension::kRelevance ? kRelevanceHint : kCoherenceHint)};
}

/// A prompt template with {{source}}, {{summary}} and {{hint}} slots.
struct PromptTemplate {
  std::string template_id;
  Dimension dimension;
  std::string text;
};

namespace judge_detail {

inline constexpr std::string_view kPreamble =
    "You will be given one summary written for a news article.\n"
    "\n"
    "Your task is to rate the summary on one metric.\n"
    "\n"
    "Please make sure you read and understand these instructions carefully. Please keep "
    "this document open while reviewing, and refer to it as needed.\n"
    "\n"
    "Evaluation Criteria:\n"
    "\n";

inline constexpr std::string_view kRelevanceBody =
    "Relevance (1-5) - selection of important content from the source. The summary should "
    "include only important information from the source document. Annotators were "
    "instructed to penalize summaries which contained redundancies and excess "
    "information.\n"
    "\n"
    "{{hint}}Evaluation Steps:\n"
    "\n"
    "1. Read the summary and the source document carefully.\n"
    "2. Compare the summary to the source document and identify the main points of the "
    "article.\n"
    "3. Assess how well the summary covers the main points of the article, and how much "
    "irrelevant or redundant information it contains.\n"
    "4. Assign a relevance score from 1 to 5.\n";

inline constexpr std::string_view kCoherenceBody =
    "Coherence (1-5) - the collective quality of all sentences. We align this dimension "
    "with the DUC quality question of structure and coherence whereby \"the summary should "
    "be well-structured and well-organized. The summary should not just be a heap of "
    "related information, but should build from sentence to sentence to a coherent body "
    "of information about a topic.\"\n"
    "\n"
    "{{hint}}Evaluation Steps:\n"
    "\n"
    "1. Read the news article carefully and identify the main topic and key points.\n"
    "2. Read the summary and compare it to the news article. Check if the summary covers "
    "the main topic and key points of the news article, and if it presents them in a clear "
    "and logical order.\n"
    "3. Assign a score for coherence on a scale of 1 to 5, where 1 is the lowest and 5 is "
    "the highest based on the Evaluation Criteria.\n";

inline std::string form(std::string_view label) {
  return fmt::format(
      "\n"
      "\n"
      "Example:\n"
      "\n"
      "\n"
      "Source Text:\n"
      "\n"
      "{{{{source}}}}\n"
      "\n"
      "Summary:\n"
      "\n"
      "{{{{summary}}}}\n"
      "\n"
      "\n"
      "Evaluation Form (scores ONLY, an integer from 1 to 5):\n"
      "\n"
      "- {}:",
      label);
}

}  // namespace judge_detail

/// Built-in chain-of-thought templates (criteria, evaluation steps, form).
/// The hint slot sits after the criteria and before the steps.
inline PromptTemplate builtin_template(Dimension d) {
  using namespace judge_detail;
  if (d == Dimension::kRelevance) {
    return {"geval-relevance-v1", d,
            std::string(kPreamble) + std::string(kRelevanceBody) + form("Relevance")};
  }
  return {"geval-coherence-v1", d,
          std::string(kPreamble) + std::string(kCoherenceBody) + form("Coherence")};
}

/// Loads `<dir>/<dimension>.txt` as a template. The id embeds a content
/// hash prefix so edits to the file are visible in output metadata.
inline PromptTemplate load_template(const std::filesystem::path& dir, Dimension d) {
  const auto path = dir / (std::string(to_string(d)) + ".txt");
  if (!std::filesystem::exists(path)) {
    throw JudgeError("prompt template missing: '" + path.string() + "'");
  }
  std::string text = read_file(path);
  for (const char* slot : {"{{source}}", "{{summary}}", "{{hint}}"}) {
    if (text.find(slot) == std::string::npos) {
      throw JudgeError("prompt template '" + path.string() + "' lacks " + slot);
    }
  }
  const auto id = "file-" + std::string(to_string(d)) + "-" + sha256_hex(text).substr(0, 12);
  return {id, d, std::move(text)};
}

struct JudgePrompt {
  Dimension dimension;
  std::string template_id;
  std::string source_text;
  std::string summary_text;
  std::optional<HintSpec> hint;
  std::string text;         // rendered prompt
  std::string prompt_hash;  // sha256 of `text`
};

/// Renders the Hint section as it appears inside a prompt.
inline std::string render_hint_section(const HintSpec& hint) {
  return "Hint:\n" + hint.hint_text + "\n\n";
}

namespace judge_detail {

/// Single-pass slot substitution; inserted text is never rescanned.
inline std::string fill(std::string_view tmpl, std::string_view source,
                        std::string_view summary, std::string_view hint) {
  std::string out;
  out.reserve(tmpl.size() + source.size() + summary.size() + hint.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl.compare(i, 10, "{{source}}") == 0) {
      out.append(source);
      i += 10;
    } else if (tmpl.compare(i, 11, "{{summary}}") == 0) {
      out.append(summary);
      i += 11;
    } else if (tmpl.compare(i, 8, "{{hint}}") == 0) {
      out.append(hint);
      i += 8;
    } else {
      out.push_back(tmpl[i++]);
    }
  }
  return out;
}

}  // namespace judge_detail

inline JudgePrompt build_prompt(const SummaryRecord& record, Dimension dimension,
                                const std::optional<HintSpec>& hint,
                                const PromptTemplate& tmpl) {
  if (tmpl.dimension != dimension) {
    throw JudgeError("template '" + tmpl.template_id + "' is for " +
                     std::string(to_string(tmpl.dimension)) + ", not " +
                     std::string(to_string(dimension)));
  }
  if (hint && hint->dimension != dimension) {
    throw JudgeError("hint for " + std::string(to_string(hint->dimension)) +
                     " used on a " + std::string(to_string(dimension)) + " prompt");
  }
  JudgePrompt p{dimension, tmpl.template_id, record.source_text, record.summary_text, hint,
                {}, {}};
  p.text = judge_detail::fill(tmpl.text, record.source_text, record.summary_text,
                              hint ? render_hint_section(*hint) : std::string());
  p.prompt_hash = sha256_hex(p.text);
  return p;
}

inline JudgePrompt build_prompt(const SummaryRecord& record, Dimension dimension,
                                const std::optional<HintSpec>& hint = std::nullopt) {
  return build_prompt(record, dimension, hint, builtin_template(dimension));
}

/// Extracts the rating: the number after the last scoring label ("Score",
/// "Rating", "Relevance", "Coherence"), or a response that is a bare number.
/// Fractions are accepted; values outside [1, 5] are errors, not clamped.
inline double parse_score(std::string_view raw_response) {
  const std::string raw(raw_response);
  if (raw.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw ScoreParseError("empty judge response", raw);
  }
  static const std::regex kLabeled(
      R"((score|rating|relevance|coherence)\**\s*(\(\s*1\s*-\s*5\s*\))?\s*(:|=|is)?\s*\**\s*([0-9]+(\.[0-9]+)?))",
      std::regex::icase);
  static const std::regex kBare(R"(^\s*\**\s*([0-9]+(\.[0-9]+)?)\s*\**\s*$)");
  std::string number;
  for (auto it = std::sregex_iterator(raw.begin(), raw.end(), kLabeled);
       it != std::sregex_iterator(); ++it) {
    number = (*it)[4].str();
  }
  if (number.empty()) {
    std::smatch m;
    if (std::regex_match(raw, m, kBare)) number = m[1].str();
  }
  if (number.empty()) throw ScoreParseError("no score found in judge response", raw);
  const double score = std::stod(number);
  if (score < 1.0 || score > 5.0) {
    throw ScoreParseError("judge score " + number + " outside [1, 5]", raw);
  }
  return score;
}

/// Corpus rating key of a judge run: the model id, with "+hint" appended
/// when the prompts carried the hint section.
inline std::string judge_variant_id(std::string_view model_id, bool hint) {
  return std::string(model_id) + (hint ? "+hint" : "");
}

struct JudgeResult {
  std::string record_id;
  std::string judge_id;  // provider model id
  Dimension dimension;
  bool hint = false;
  std::string raw_response;
  std::optional<double> score;
  std::string prompt_hash;
  std::string error;  // empty on success
};

struct JudgeOptions {
  std::size_t concurrency = 4;
  std::optional<PromptTemplate> prompt_template;  // built-in when unset
  DiskCache* cache = nullptr;
};

/// Judges every record. Results come back in corpus order. Per-record
/// provider and parse failures are recorded in JudgeResult::error; an
/// authentication failure aborts the run.
inline std::vector<JudgeResult> judge_corpus(const Corpus& corpus, Dimension dimension,
                                             const std::optional<HintSpec>& hint,
                                             ChatProvider& provider,
                                             const JudgeOptions& options = {}) {
  const PromptTemplate tmpl =
      options.prompt_template ? *options.prompt_template : builtin_template(dimension);
  std::vector<JudgePrompt> prompts;
  prompts.reserve(corpus.size());
  for (const auto& r : corpus.records) prompts.push_back(build_prompt(r, dimension, hint, tmpl));

  std::optional<CachedChatProvider> cached;
  if (options.cache != nullptr) cached.emplace(provider, *options.cache);
  ChatProvider& chat = cached ? static_cast<ChatProvider&>(*cached) : provider;

  std::vector<JudgeResult> results(corpus.size());
  parallel_for(corpus.size(), options.concurrency, [&](std::size_t i) {
    JudgeResult& res = results[i];
    res.record_id = corpus.records[i].record_id;
    res.judge_id = provider.model_id();
    res.dimension = dimension;
    res.hint = hint.has_value();
    res.prompt_hash = prompts[i].prompt_hash;
    try {
      res.raw_response = chat.complete(prompts[i].text);
      res.score = parse_score(res.raw_response);
    } catch (const ProviderError& e) {
      if (e.kind() == ProviderErrorKind::kAuth) throw;
      res.error = e.what();
    } catch (const ScoreParseError& e) {
      res.error = e.what();
    }
  });
  return results;
}

/// Stores successful scores in the corpus under the judge variant id.
inline Corpus apply_judge_results(Corpus corpus, const std::vector<JudgeResult>& results) {
  std::map<std::string, std::size_t, std::less<>> index;
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    index[corpus.records[i].record_id] = i;
  }
  for (const auto& r : results) {
    if (!r.score) continue;
    auto it = index.find(r.record_id);
    if (it == index.end()) throw JudgeError("result for unknown record '" + r.record_id + "'");
    corpus.records[it->second].model_ratings[{judge_variant_id(r.judge_id, r.hint),
                                              r.dimension}] = *r.score;
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Alignment report

struct JudgeVariant {
  std::string judge_id;
  bool hint = false;

  std::string rating_key() const { return judge_variant_id(judge_id, hint); }
  std::string label() const { return judge_id + (hint ? " + hint" : ""); }
};

/// Parses "model" or "model+hint".
inline JudgeVariant parse_judge_variant(std::string_view text) {
  constexpr std::string_view kSuffix = "+hint";
  if (text.size() > kSuffix.size() && text.substr(text.size() - kSuffix.size()) == kSuffix) {
    return {std::string(text.substr(0, text.size() - kSuffix.size())), true};
  }
  if (text.empty()) throw ConfigError("empty judge variant");
  return {std::string(text), false};
}

struct AlignmentRow {
  JudgeVariant variant;
  Dimension dimension;
  CorrelationResult pearson;
  CorrelationResult spearman;
  CorrelationResult kendall;
};

struct AlignmentReport {
  std::vector<JudgeVariant> variants;
  std::vector<Dimension> dimensions;
  std::vector<AlignmentRow> rows;  // variant-major, then dimension

  const AlignmentRow& at(const JudgeVariant& v, Dimension d) const {
    for (const auto& r : rows) {
      if (r.variant.rating_key() == v.rating_key() && r.dimension == d) return r;
    }
    throw JudgeError("no alignment row for " + v.rating_key());
  }
};

/// Judge-vs-human Pearson, Spearman and Kendall per variant and dimension.
inline AlignmentReport alignment_report(const Corpus& corpus,
                                        const std::vector<JudgeVariant>& variants,
                                        const std::vector<Dimension>& dimensions) {
  AlignmentReport report{variants, dimensions, {}};
  for (const auto& v : variants) {
    for (Dimension d : dimensions) {
      const auto human = aggregate_human(corpus, d);
      const auto judge = rating_vector(corpus, v.rating_key(), d);
      report.rows.push_back({v, d, pearson(judge.values, human.values),
                             spearman(judge.values, human.values),
                             kendall_tau(judge.values, human.values)});
    }
  }
  return report;
}

namespace judge_detail {

inline std::string two_decimals(const CorrelationResult& r) {
  return r.defined ? fmt::format("{:.2f}", r.coefficient) : "n/a";
}

inline std::string capitalized(Dimension d) {
  std::string s(to_string(d));
  s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

}  // namespace judge_detail

/// Human-readable table: one row per judge variant, Pearson / Spearman /
/// Kendall columns per dimension, coefficients to two decimals.
inline std::string format_alignment_table(const AlignmentReport& report) {
  using judge_detail::two_decimals;
  std::size_t label_width = std::string_view("Evaluator").size();
  for (const auto& v : report.variants) label_width = std::max(label_width, v.label().size());
  constexpr int kCell = 10;
  const int group = 3 * kCell;

  std::string out = fmt::format("{:<{}}", "Evaluator", label_width);
  for (Dimension d : report.dimensions) {
    out += fmt::format("  {:<{}}", judge_detail::capitalized(d), group);
  }
  out += "\n" + std::string(label_width, ' ');
  for (std::size_t i = 0; i < report.dimensions.size(); ++i) {
    out += fmt::format("  {:<{}}{:<{}}{:<{}}", "Pearson", kCell, "Spearman", kCell, "Kendall",
                       kCell);
  }
  out += "\n";
  for (const auto& v : report.variants) {
    std::string line = fmt::format("{:<{}}", v.label(), label_width);
    for (Dimension d : report.dimensions) {
      const auto& row = report.at(v, d);
      line += fmt::format("  {:<{}}{:<{}}{:<{}}", two_decimals(row.pearson), kCell,
                          two_decimals(row.spearman), kCell, two_decimals(row.kendall), kCell);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

/// Writes judge results as line-delimited records. Raw responses go to
/// `<raw_dir>/<prompt_hash>.txt`; the record stores that path.
inline std::string judge_results_jsonl(const std::vector<JudgeResult>& results,
                                       const std::filesystem::path& raw_dir) {
  std::string out;
  for (const auto& r : results) {
    nlohmann::ordered_json obj;
    obj["record_id"] = r.record_id;
    obj["judge_id"] = r.judge_id;
    obj["dimension"] = std::string(to_string(r.dimension));
    obj["hint"] = r.hint;
    obj["score"] = r.score ? nlohmann::ordered_json(*r.score) : nlohmann::ordered_json(nullptr);
    obj["prompt_hash"] = r.prompt_hash;
    const auto raw_path = raw_dir / (r.prompt_hash + ".txt");
    obj["raw_response_path"] = raw_path.string();
    if (!r.error.empty()) obj["error"] = r.error;
    out += obj.dump() + "\n";
  }
  return out;
}

}  // namespace sumfeat
