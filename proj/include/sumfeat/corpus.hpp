#pragma once

// Source/summary/rating records and the line-delimited corpus format.
//
// One JSON object per line:
//   {"id": "...", "source": "...", "summary": "...", "system": "...",
//    "human": {"relevance": [4, 5, 4], "coherence": [3, 3, 4]},
//    "model": {"judge-a": {"relevance": 4.0, "coherence": 3.5}}}
// Dimensions other than relevance/coherence are tolerated and ignored.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sumfeat/common.hpp"
#include "sumfeat/io.hpp"

namespace sumfeat {

class CorpusError : public Error {
 public:
  using Error::Error;
};

struct SummaryRecord {
  std::string record_id;
  std::string source_text;
  std::string summary_text;
  std::string system_id;
  std::map<Dimension, std::vector<int>> human_ratings;
  std::map<std::pair<std::string, Dimension>, double> model_ratings;

  friend bool operator==(const SummaryRecord&, const SummaryRecord&) = default;
};

struct Corpus {
  std::vector<SummaryRecord> records;
  std::string source_path;

  std::size_t size() const { return records.size(); }
  /// Corpora compare by content; the path they came from is not part of it.
  friend bool operator==(const Corpus& a, const Corpus& b) {
    return a.records == b.records;
  }
};

/// Scores of one rater for one dimension, aligned with corpus order.
struct RatingVector {
  Dimension dimension;
  std::string rater_id;
  std::vector<double> values;
};

inline constexpr std::string_view kHumanRater = "human";

namespace detail {

inline bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
           c == '\v';
  });
}

inline std::string where(std::size_t line, std::string_view id) {
  std::string s = "line " + std::to_string(line);
  if (!id.empty()) s += " (record '" + std::string(id) + "')";
  return s;
}

inline std::string required_string(const nlohmann::json& obj,
                                   const char* field, std::size_t line,
                                   std::string_view id) {
  auto it = obj.find(field);
  if (it == obj.end() || !it->is_string()) {
    throw CorpusError(where(line, id) + ": field '" + field +
                      "' missing or not a string");
  }
  return it->get<std::string>();
}

}  // namespace detail

/// Validates one record against the record invariants. `line` is used only
/// for error messages.
inline void validate_record(const SummaryRecord& r, std::size_t line = 0) {
  const auto w = detail::where(line, r.record_id);
  if (r.record_id.empty()) throw CorpusError(w + ": empty id");
  if (detail::blank(r.source_text)) throw CorpusError(w + ": source is empty");
  if (detail::blank(r.summary_text)) throw CorpusError(w + ": summary is empty");
  for (const auto& [dim, scores] : r.human_ratings) {
    for (int s : scores) {
      if (s < 1 || s > 5) {
        throw CorpusError(w + ": human." + std::string(to_string(dim)) +
                          " score " + std::to_string(s) + " out of range [1,5]");
      }
    }
  }
  for (const auto& [key, score] : r.model_ratings) {
    if (!std::isfinite(score) || score < 1.0 || score > 5.0) {
      throw CorpusError(w + ": model." + key.first + "." +
                        std::string(to_string(key.second)) + " score " +
                        std::to_string(score) + " out of range [1,5]");
    }
  }
}

/// Parses a single corpus line. `line_no` is 1-based and only used in
/// error messages.
inline SummaryRecord parse_record(std::string_view line, std::size_t line_no) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw CorpusError(detail::where(line_no, {}) + ": malformed JSON: " +
                      e.what());
  }
  if (!obj.is_object()) {
    throw CorpusError(detail::where(line_no, {}) + ": not a JSON object");
  }
  SummaryRecord r;
  r.record_id = detail::required_string(obj, "id", line_no, {});
  const auto w = detail::where(line_no, r.record_id);
  r.source_text = detail::required_string(obj, "source", line_no, r.record_id);
  r.summary_text = detail::required_string(obj, "summary", line_no, r.record_id);
  r.system_id = detail::required_string(obj, "system", line_no, r.record_id);

  auto human = obj.find("human");
  if (human == obj.end() || !human->is_object()) {
    throw CorpusError(w + ": field 'human' missing or not an object");
  }
  for (const auto& [name, scores] : human->items()) {
    Dimension dim;
    if (!try_parse_dimension(name, dim)) continue;
    if (!scores.is_array()) {
      throw CorpusError(w + ": human." + name + " is not an array");
    }
    std::vector<int> values;
    for (const auto& s : scores) {
      if (!s.is_number_integer()) {
        throw CorpusError(w + ": human." + name + " contains a non-integer score");
      }
      values.push_back(s.get<int>());
    }
    r.human_ratings[dim] = std::move(values);
  }

  if (auto model = obj.find("model"); model != obj.end()) {
    if (!model->is_object()) {
      throw CorpusError(w + ": field 'model' is not an object");
    }
    for (const auto& [judge, dims] : model->items()) {
      if (!dims.is_object()) {
        throw CorpusError(w + ": model." + judge + " is not an object");
      }
      for (const auto& [name, score] : dims.items()) {
        Dimension dim;
        if (!try_parse_dimension(name, dim)) continue;
        if (!score.is_number()) {
          throw CorpusError(w + ": model." + judge + "." + name +
                            " is not a number");
        }
        r.model_ratings[{judge, dim}] = score.get<double>();
      }
    }
  }
  validate_record(r, line_no);
  return r;
}

/// Parses a whole corpus from its text. Blank lines are skipped.
inline Corpus parse_corpus(std::string_view text, std::string source_path = {}) {
  Corpus corpus;
  corpus.source_path = std::move(source_path);
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (detail::blank(line)) continue;
    SummaryRecord r = parse_record(line, line_no);
    if (!seen.insert(r.record_id).second) {
      throw CorpusError(detail::where(line_no, r.record_id) +
                        ": duplicate record id");
    }
    corpus.records.push_back(std::move(r));
  }
  return corpus;
}

inline Corpus load_corpus(const std::filesystem::path& path) {
  return parse_corpus(read_file(path), path.string());
}

inline nlohmann::ordered_json record_to_json(const SummaryRecord& r) {
  nlohmann::ordered_json obj;
  obj["id"] = r.record_id;
  obj["source"] = r.source_text;
  obj["summary"] = r.summary_text;
  obj["system"] = r.system_id;
  obj["human"] = nlohmann::ordered_json::object();
  for (const auto& [dim, scores] : r.human_ratings) {
    obj["human"][std::string(to_string(dim))] = scores;
  }
  if (!r.model_ratings.empty()) {
    obj["model"] = nlohmann::ordered_json::object();
    for (const auto& [key, score] : r.model_ratings) {
      obj["model"][key.first][std::string(to_string(key.second))] = score;
    }
  }
  return obj;
}

/// Serializes a corpus in the line-delimited input format.
inline std::string to_jsonl(const Corpus& corpus) {
  std::string out;
  for (const auto& r : corpus.records) {
    out += record_to_json(r).dump();
    out.push_back('\n');
  }
  return out;
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  write_file_atomic(path, to_jsonl(corpus));
}

/// Mean of each record's annotator scores for `dimension`.
inline RatingVector aggregate_human(const Corpus& corpus, Dimension dimension) {
  RatingVector out{dimension, std::string(kHumanRater), {}};
  out.values.reserve(corpus.size());
  for (const auto& r : corpus.records) {
    auto it = r.human_ratings.find(dimension);
    if (it == r.human_ratings.end() || it->second.empty()) {
      throw CorpusError("record '" + r.record_id + "' has no human " +
                        std::string(to_string(dimension)) + " score");
    }
    const auto& s = it->second;
    out.values.push_back(static_cast<double>(std::accumulate(s.begin(), s.end(), 0L)) /
                         static_cast<double>(s.size()));
  }
  return out;
}

inline RatingVector rating_vector(const Corpus& corpus, std::string_view judge_id,
                                  Dimension dimension) {
  RatingVector out{dimension, std::string(judge_id), {}};
  out.values.reserve(corpus.size());
  std::vector<std::string> missing;
  for (const auto& r : corpus.records) {
    auto it = r.model_ratings.find({std::string(judge_id), dimension});
    if (it == r.model_ratings.end()) {
      missing.push_back(r.record_id);
    } else {
      out.values.push_back(it->second);
    }
  }
  if (!missing.empty()) {
    std::string msg = "judge '" + std::string(judge_id) + "' has no " +
                      std::string(to_string(dimension)) + " rating for " +
                      std::to_string(missing.size()) + " record(s):";
    for (std::size_t i = 0; i < missing.size(); ++i) {
      if (i == 20) {
        msg += " ...";
        break;
      }
      msg += " " + missing[i];
    }
    throw CorpusError(msg);
  }
  return out;
}

/// Rating vector for "human" (annotator mean) or any judge id.
inline RatingVector rater_vector(const Corpus& corpus, std::string_view rater_id,
                                 Dimension dimension) {
  if (rater_id == kHumanRater) return aggregate_human(corpus, dimension);
  return rating_vector(corpus, rater_id, dimension);
}

/// Judge ids that rate every record of the corpus on `dimension`, sorted.
inline std::vector<std::string> complete_judges(const Corpus& corpus,
                                                Dimension dimension) {
  if (corpus.records.empty()) return {};
  std::vector<std::string> out;
  for (const auto& [key, _] : corpus.records.front().model_ratings) {
    if (key.second != dimension) continue;
    bool all = std::all_of(corpus.records.begin(), corpus.records.end(),
                           [&](const SummaryRecord& r) {
                             return r.model_ratings.count(key) > 0;
                           });
    if (all) out.push_back(key.first);
  }
  return out;
}

/// Converts SummEval's `model_annotations.aligned.paired.jsonl` into the
/// corpus format. Expert annotations supply the human scores; the record
/// id is "<article id>/<system id>".
inline Corpus import_summeval(std::string_view text, std::string source_path = {}) {
  Corpus corpus;
  corpus.source_path = std::move(source_path);
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (detail::blank(line)) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw CorpusError(detail::where(line_no, {}) + ": malformed JSON: " +
                        e.what());
    }
    SummaryRecord r;
    const auto article = detail::required_string(obj, "id", line_no, {});
    r.system_id = detail::required_string(obj, "model_id", line_no, article);
    r.record_id = article + "/" + r.system_id;
    r.source_text = detail::required_string(obj, "text", line_no, r.record_id);
    r.summary_text = detail::required_string(obj, "decoded", line_no, r.record_id);
    auto experts = obj.find("expert_annotations");
    if (experts == obj.end() || !experts->is_array()) {
      throw CorpusError(detail::where(line_no, r.record_id) +
                        ": expert_annotations missing");
    }
    for (const auto& ann : *experts) {
      for (Dimension dim : kAllDimensions) {
        auto s = ann.find(std::string(to_string(dim)));
        if (s == ann.end()) continue;
        if (!s->is_number_integer()) {
          throw CorpusError(detail::where(line_no, r.record_id) +
                            ": non-integer expert score");
        }
        r.human_ratings[dim].push_back(s->get<int>());
      }
    }
    validate_record(r, line_no);
    if (!seen.insert(r.record_id).second) {
      throw CorpusError(detail::where(line_no, r.record_id) +
                        ": duplicate record id");
    }
    corpus.records.push_back(std::move(r));
  }
  return corpus;
}

}  // namespace sumfeat
