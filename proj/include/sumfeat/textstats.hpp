#pragma once

// Tokenization, syllable counting and the readability indices.
//
// Frozen formulas (W = words, S = sentences, Y = syllables):
//   Flesch Reading Ease   206.835 - 1.015 W/S - 84.6 Y/W
//   Flesch-Kincaid Grade  0.39 W/S + 11.8 Y/W - 15.59
//   ARI                   4.71 chars/W + 0.5 W/S - 21.43   (chars = letters+digits)
//   Gunning Fog           0.4 (W/S + 100 complex/W)        (complex = >= 3 syllables)
//   SMOG                  1.0430 sqrt(30 poly/S) + 3.1291  (poly = >= 3 syllables)
//   Dale-Chall            0.1579 (100 difficult/W) + 0.0496 W/S, +3.6365 if difficult/W > 5%

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "sumfeat/common.hpp"

namespace sumfeat {

/// Byte range of one sentence in the original text plus the words it holds.
struct SentenceSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t first_word = 0;
  std::size_t word_count = 0;
};

struct TokenizedText {
  std::vector<std::string> words;          // lowercased
  std::vector<std::string> surface_words;  // original case
  std::vector<SentenceSpan> sentences;
  std::vector<int> char_counts;  // letters + digits per word
  std::vector<int> syllables;
};

struct ReadabilityProfile {
  double flesch_reading_ease = 0;
  double automated_readability_index = 0;
  double flesch_kincaid_grade = 0;
  double gunning_fog = 0;
  double smog_index = 0;
  double dale_chall = 0;
  long lexicon_count = 0;
  long difficult_words = 0;
  long syllable_count = 0;
  /// SMOG was calibrated on 30-sentence samples; set when fewer were seen.
  bool smog_short_sample = false;
};

/// Rule used for difficult words, written into output metadata.
inline constexpr std::string_view kDifficultWordRule =
    "not-on-familiar-list-and-at-least-2-syllables";

namespace textstats_detail {

inline bool is_ascii_alpha(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}
inline bool is_ascii_digit(unsigned char c) { return c >= '0' && c <= '9'; }
inline bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}
/// Bytes of multi-byte UTF-8 sequences are treated as letters.
inline bool is_word_byte(unsigned char c) {
  return is_ascii_alpha(c) || is_ascii_digit(c) || c >= 0x80;
}
inline bool is_joiner(unsigned char c) {
  return c == '\'' || c == '-' || c == '.';
}
inline bool is_vowel(char c) {
  switch (c) {
    case 'a': case 'e': case 'i': case 'o': case 'u': case 'y':
      return true;
    default:
      return false;
  }
}
inline bool has_letter(std::string_view w) {
  return std::any_of(w.begin(), w.end(), [](unsigned char c) {
    return is_ascii_alpha(c) || c >= 0x80;
  });
}
/// Letters and digits, counting each UTF-8 code point once.
inline int alnum_count(std::string_view w) {
  int n = 0;
  for (unsigned char c : w) {
    if (is_ascii_alpha(c) || is_ascii_digit(c) || (c >= 0x80 && (c & 0xC0) != 0x80)) ++n;
  }
  return n;
}
inline std::string lower(std::string_view w) {
  std::string out(w);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline const std::unordered_set<std::string>& abbreviations() {
  static const std::unordered_set<std::string> kAbbrev = {
      "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc",
      "inc", "ltd", "co", "corp", "gov", "gen", "col", "lt", "sgt", "rep",
      "sen", "rev", "no", "jan", "feb", "mar", "apr", "jun", "jul", "aug",
      "sep", "sept", "oct", "nov", "dec", "u.s", "u.k", "e.g", "i.e", "a.m",
      "p.m"};
  return kAbbrev;
}

inline int count_part(std::string_view part) {
  int groups = 0;
  bool in_group = false;
  for (char c : part) {
    if (is_vowel(c)) {
      if (!in_group) ++groups;
      in_group = true;
    } else {
      in_group = false;
    }
  }
  const std::size_t n = part.size();
  // Terminal silent "e": a lone final e after a consonant, except the
  // consonant + "le" ending (ta-ble, lit-tle).
  if (groups > 1 && n >= 2 && part[n - 1] == 'e' && !is_vowel(part[n - 2])) {
    const bool consonant_le =
        n >= 3 && part[n - 2] == 'l' && !is_vowel(part[n - 3]);
    if (!consonant_le) --groups;
  }
  return std::max(groups, 1);
}

}  // namespace textstats_detail

/// Heuristic syllable count: vowel groups (a e i o u y) minus a terminal
/// silent e, never less than one. Hyphenated words are counted per part.
inline int count_syllables(std::string_view word) {
  namespace d = textstats_detail;
  if (!d::has_letter(word)) {
    throw TextError("cannot count syllables of non-alphabetic token '" +
                    std::string(word) + "'");
  }
  std::string w;
  w.reserve(word.size());
  for (unsigned char c : word) {
    if (d::is_ascii_alpha(c)) {
      w.push_back(static_cast<char>(std::tolower(c)));
    } else if (c == '-') {
      w.push_back('-');
    } else if (c >= 0x80) {
      // Non-ASCII letters count as consonants; continuation bytes are dropped.
      if ((c & 0xC0) != 0x80) w.push_back('#');
    } else {
      w.push_back('0');
    }
  }
  int total = 0;
  std::size_t pos = 0;
  while (pos <= w.size()) {
    std::size_t dash = w.find('-', pos);
    if (dash == std::string::npos) dash = w.size();
    std::string_view part(w.data() + pos, dash - pos);
    if (std::any_of(part.begin(), part.end(),
                    [](char c) { return c == '#' || (c >= 'a' && c <= 'z'); })) {
      total += d::count_part(part);
    }
    pos = dash + 1;
  }
  return std::max(total, 1);
}

/// Splits text into words and sentences.
///
/// Words are runs of letters, digits and non-ASCII bytes, joined by inner
/// apostrophes, hyphens or periods; a run counts as a word only if it has a
/// letter. A sentence ends at '.', '!' or '?' (optionally followed by closing
/// quotes or brackets) when followed by whitespace or end of text, unless the
/// token is a known abbreviation or a single-letter initial.
inline TokenizedText tokenize(std::string_view text) {
  namespace d = textstats_detail;
  if (std::all_of(text.begin(), text.end(),
                  [](unsigned char c) { return d::is_space(c); })) {
    throw TextError("cannot tokenize empty text");
  }
  TokenizedText out;
  std::size_t sentence_begin = std::string_view::npos;
  std::size_t sentence_first_word = 0;

  auto close_sentence = [&](std::size_t end) {
    if (sentence_begin == std::string_view::npos) return;
    const std::size_t count = out.words.size() - sentence_first_word;
    if (count > 0) {
      out.sentences.push_back({sentence_begin, end, sentence_first_word, count});
    }
    sentence_begin = std::string_view::npos;
  };

  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    while (i < n && d::is_space(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= n) break;
    const std::size_t chunk_begin = i;
    while (i < n && !d::is_space(static_cast<unsigned char>(text[i]))) ++i;
    const std::string_view chunk = text.substr(chunk_begin, i - chunk_begin);
    if (sentence_begin == std::string_view::npos) {
      sentence_begin = chunk_begin;
      sentence_first_word = out.words.size();
    }

    // Words inside the chunk.
    std::string last_word_lower;
    std::size_t j = 0;
    while (j < chunk.size()) {
      while (j < chunk.size() && !d::is_word_byte(static_cast<unsigned char>(chunk[j]))) ++j;
      if (j >= chunk.size()) break;
      std::size_t k = j;
      while (k < chunk.size()) {
        const auto c = static_cast<unsigned char>(chunk[k]);
        if (d::is_word_byte(c)) {
          ++k;
        } else if (d::is_joiner(c) && k + 1 < chunk.size() &&
                   d::is_word_byte(static_cast<unsigned char>(chunk[k + 1]))) {
          ++k;
        } else {
          break;
        }
      }
      const std::string_view word = chunk.substr(j, k - j);
      if (d::has_letter(word)) {
        out.surface_words.emplace_back(word);
        out.words.push_back(d::lower(word));
        out.char_counts.push_back(d::alnum_count(word));
        out.syllables.push_back(count_syllables(word));
        last_word_lower = out.words.back();
      } else {
        last_word_lower.clear();
      }
      j = k;
    }

    // Sentence boundary at the end of this chunk?
    std::size_t e = chunk.size();
    while (e > 0) {
      const char c = chunk[e - 1];
      if (c == '"' || c == '\'' || c == ')' || c == ']' || c == '}') {
        --e;
      } else {
        break;
      }
    }
    if (e == 0) continue;
    const char terminal = chunk[e - 1];
    if (terminal != '.' && terminal != '!' && terminal != '?') continue;
    if (terminal == '.' && e >= 2 &&
        d::is_word_byte(static_cast<unsigned char>(chunk[e - 2])) &&
        !last_word_lower.empty()) {
      const bool initial = d::alnum_count(last_word_lower) == 1 &&
                           d::is_ascii_alpha(static_cast<unsigned char>(last_word_lower[0]));
      if (initial || d::abbreviations().count(last_word_lower) > 0) continue;
    }
    close_sentence(chunk_begin + chunk.size());
  }
  close_sentence(n);
  if (out.sentences.empty()) {
    // Non-empty text without words still forms one (empty) sentence.
    std::size_t b = 0;
    while (b < n && d::is_space(static_cast<unsigned char>(text[b]))) ++b;
    out.sentences.push_back({b, n, 0, out.words.size()});
  }
  return out;
}

/// Familiar-word list for Dale-Chall, one lowercase word per line.
class FamiliarWords {
 public:
  FamiliarWords() = default;
  explicit FamiliarWords(std::unordered_set<std::string> words)
      : words_(std::move(words)) {}

  static FamiliarWords load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
      throw ConfigError("familiar word list unavailable: '" + path.string() + "'");
    }
    std::unordered_set<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && textstats_detail::is_space(static_cast<unsigned char>(line.back()))) {
        line.pop_back();
      }
      std::size_t b = 0;
      while (b < line.size() && textstats_detail::is_space(static_cast<unsigned char>(line[b]))) ++b;
      if (b < line.size()) words.insert(textstats_detail::lower(line.substr(b)));
    }
    if (words.empty()) {
      throw ConfigError("familiar word list '" + path.string() + "' is empty");
    }
    return FamiliarWords(std::move(words));
  }

  bool contains(const std::string& lowercase_word) const {
    return words_.count(lowercase_word) > 0;
  }
  bool empty() const { return words_.empty(); }
  std::size_t size() const { return words_.size(); }

 private:
  std::unordered_set<std::string> words_;
};

/// Path of the bundled familiar-word list.
inline std::filesystem::path default_familiar_words_path() {
#ifdef SUMFEAT_RESOURCE_DIR
  return std::filesystem::path(SUMFEAT_RESOURCE_DIR) / "dale_chall_familiar.txt";
#else
  return "resources/dale_chall_familiar.txt";
#endif
}

inline long difficult_word_count(const TokenizedText& tokens,
                                 const FamiliarWords& familiar) {
  if (familiar.empty()) throw ConfigError("familiar word list unavailable");
  long n = 0;
  for (std::size_t i = 0; i < tokens.words.size(); ++i) {
    if (tokens.syllables[i] >= 2 && !familiar.contains(tokens.words[i])) ++n;
  }
  return n;
}

inline ReadabilityProfile readability_profile(const TokenizedText& tokens,
                                              const FamiliarWords& familiar) {
  const auto words = static_cast<double>(tokens.words.size());
  const auto sentences = static_cast<double>(tokens.sentences.size());
  if (tokens.words.empty()) throw TextError("readability of text with zero words");
  if (tokens.sentences.empty()) throw TextError("readability of text with zero sentences");

  long syllables = 0;
  long chars = 0;
  long polysyllables = 0;
  for (std::size_t i = 0; i < tokens.words.size(); ++i) {
    syllables += tokens.syllables[i];
    chars += tokens.char_counts[i];
    if (tokens.syllables[i] >= 3) ++polysyllables;
  }
  const long difficult = difficult_word_count(tokens, familiar);

  const double wps = words / sentences;
  const double spw = static_cast<double>(syllables) / words;
  const double cpw = static_cast<double>(chars) / words;
  const double difficult_pct = 100.0 * static_cast<double>(difficult) / words;

  ReadabilityProfile p;
  p.flesch_reading_ease = 206.835 - 1.015 * wps - 84.6 * spw;
  p.flesch_kincaid_grade = 0.39 * wps + 11.8 * spw - 15.59;
  p.automated_readability_index = 4.71 * cpw + 0.5 * wps - 21.43;
  p.gunning_fog = 0.4 * (wps + 100.0 * static_cast<double>(polysyllables) / words);
  p.smog_index =
      1.0430 * std::sqrt(static_cast<double>(polysyllables) * 30.0 / sentences) + 3.1291;
  p.dale_chall = 0.1579 * difficult_pct + 0.0496 * wps;
  if (difficult_pct > 5.0) p.dale_chall += 3.6365;
  p.lexicon_count = static_cast<long>(tokens.words.size());
  p.difficult_words = difficult;
  p.syllable_count = syllables;
  p.smog_short_sample = tokens.sentences.size() < 30;
  return p;
}

}  // namespace sumfeat
