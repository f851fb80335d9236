#include <atomic>
#include <cstdlib>
#include <iostream>
#include <filesystem>
#include <map>

#include <unistd.h>

#include <gtest/gtest.h>

#include "sumfeat/judge.hpp"
#include "sumfeat/stubs.hpp"

using namespace sumfeat;

namespace {

SummaryRecord record(const std::string& id, const std::string& summary, std::vector<int> rel,
                     std::vector<int> coh = {3}) {
  SummaryRecord r;
  r.record_id = id;
  r.source_text = "Officials opened a new bridge over the river on Monday.";
  r.summary_text = summary;
  r.system_id = "M0";
  r.human_ratings[Dimension::kRelevance] = std::move(rel);
  r.human_ratings[Dimension::kCoherence] = std::move(coh);
  return r;
}

Corpus five_records() {
  Corpus c;
  for (int i = 1; i <= 5; ++i) {
    c.records.push_back(record("r" + std::to_string(i), "Summary number " + std::to_string(i) + ".", {i}));
  }
  return c;
}

/// Answers from a script keyed by summary and by whether the prompt has a
/// Hint section. Response wording varies the way real judges do.
class ScriptedJudge : public ChatProvider {
 public:
  std::map<std::string, std::string> plain, hinted;
  std::atomic<int> calls{0};

  std::string complete(std::string_view prompt) override {
    ++calls;
    const bool hint = prompt.find("\nHint:\n") != std::string_view::npos;
    for (const auto& [summary, reply] : hint ? hinted : plain) {
      if (prompt.find(summary) != std::string_view::npos) return reply;
    }
    return "I cannot rate this.";
  }
  std::string model_id() const override { return "scripted"; }
};

struct TableJudge : ScriptedJudge {
  // without hint: 2 1 4 3 5, with hint: 1 2 3 5 4
  TableJudge() {
  plain = {{"Summary number 1.", "Relevance: 2"},
             {"Summary number 2.", "**Score:** 1"},
             {"Summary number 3.", "4"},
             {"Summary number 4.", "Rating (1-5): 3"},
             {"Summary number 5.", "The summary is complete.\nScore: 5"}};
  hinted = {{"Summary number 1.", "- Relevance: 1"},
              {"Summary number 2.", "Relevance score is 2"},
              {"Summary number 3.", "Score: 3"},
              {"Summary number 4.", "5"},
              {"Summary number 5.", "Relevance: 4.0"}};
  }
};

class AuthFailingJudge : public ChatProvider {
 public:
  std::string complete(std::string_view) override {
    throw ProviderError(ProviderErrorKind::kAuth, "HTTP 401", 401);
  }
  std::string model_id() const override { return "locked"; }
};

}  // namespace

TEST(Hint, TextsAreVerbatim) {
  EXPECT_EQ(default_hint(Dimension::kRelevance).hint_text,
            "These metrics are important for evaluation:\n"
            "- for summary: entropy, perplexity, Gini index, syllable count, lexicon count, difficult words\n"
            "- cosine similarity between source and summary");
  EXPECT_EQ(default_hint(Dimension::kCoherence).hint_text,
            "These metrics are important for evaluation of summary: perplexity, flesch kincaid grade, "
            "gunning fog, automated readability index, entropy, smog index");
}

TEST(Prompt, HintAppearsVerbatimAndIsTheOnlyDifference) {
  const auto r = record("x", "The bridge opened.", {4});
  for (Dimension d : kAllDimensions) {
    const auto hint = default_hint(d);
    const auto with = build_prompt(r, d, hint);
    const auto without = build_prompt(r, d);
    EXPECT_NE(with.text.find(hint.hint_text), std::string::npos);
    EXPECT_EQ(without.text.find("Hint:"), std::string::npos);
    const auto section = render_hint_section(hint);
    const auto pos = with.text.find(section);
    ASSERT_NE(pos, std::string::npos);
    EXPECT_EQ(with.text.substr(0, pos) + with.text.substr(pos + section.size()), without.text);
    EXPECT_NE(with.prompt_hash, without.prompt_hash);
    EXPECT_EQ(with.template_id, without.template_id);
    // The hint precedes the evaluation steps and the source text.
    EXPECT_LT(pos, with.text.find("Evaluation Steps:"));
    EXPECT_LT(with.text.find("Evaluation Criteria:"), pos);
  }
}

TEST(Prompt, SlotsAreFilledOnce) {
  auto r = record("x", "A summary mentioning {{hint}} literally.", {4});
  r.source_text = "Source with {{summary}} inside.";
  const auto p = build_prompt(r, Dimension::kCoherence);
  EXPECT_NE(p.text.find("Source with {{summary}} inside."), std::string::npos);
  EXPECT_NE(p.text.find("A summary mentioning {{hint}} literally."), std::string::npos);
  EXPECT_EQ(p.text.substr(p.text.size() - 12), "- Coherence:");
  EXPECT_EQ(p.prompt_hash, sha256_hex(p.text));
}

TEST(Prompt, TemplateAndHintMustMatchDimension) {
  const auto r = record("x", "s", {4});
  EXPECT_THROW(build_prompt(r, Dimension::kRelevance, default_hint(Dimension::kCoherence)), JudgeError);
  EXPECT_THROW(build_prompt(r, Dimension::kRelevance, std::nullopt, builtin_template(Dimension::kCoherence)),
               JudgeError);
}

TEST(Prompt, TemplateFromDirectory) {
  const auto dir = std::filesystem::temp_directory_path() / ("sumfeat_tmpl_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "relevance.txt", "Rate.\n{{hint}}S: {{source}}\nT: {{summary}}\nScore:");
  write_file_atomic(dir / "coherence.txt", "missing slots");
  const auto t = load_template(dir, Dimension::kRelevance);
  EXPECT_EQ(t.template_id.rfind("file-relevance-", 0), 0u);
  const auto p = build_prompt(record("x", "sum", {3}), Dimension::kRelevance,
                              default_hint(Dimension::kRelevance), t);
  EXPECT_EQ(p.text, "Rate.\nHint:\n" + std::string(kRelevanceHint) +
                        "\n\nS: Officials opened a new bridge over the river on Monday.\nT: sum\nScore:");
  EXPECT_THROW(load_template(dir, Dimension::kCoherence), JudgeError);
  std::filesystem::remove_all(dir);
}

TEST(ParseScore, AcceptedForms) {
  EXPECT_EQ(parse_score("Score: 4"), 4.0);
  EXPECT_EQ(parse_score("Relevance: 3.5"), 3.5);
  EXPECT_EQ(parse_score("- Coherence: 5"), 5.0);
  EXPECT_EQ(parse_score("Coherence (1-5): 3"), 3.0);
  EXPECT_EQ(parse_score("**Rating:** 2"), 2.0);
  EXPECT_EQ(parse_score("  5\n"), 5.0);
  EXPECT_EQ(parse_score("**4**"), 4.0);
  EXPECT_EQ(parse_score("The first draft scored low.\nScore: 2\nOn reflection, final score: 4"), 4.0);
}

TEST(ParseScore, Rejected) {
  EXPECT_THROW(parse_score(""), ScoreParseError);
  EXPECT_THROW(parse_score("It is a good summary."), ScoreParseError);
  EXPECT_THROW(parse_score("Score: 7"), ScoreParseError);
  EXPECT_THROW(parse_score("Score: 0"), ScoreParseError);
  try {
    parse_score("Relevance: 9");
  } catch (const ScoreParseError& e) {
    EXPECT_EQ(e.raw_response(), "Relevance: 9");
  }
}

TEST(JudgeCorpus, OrderErrorsAndCache) {
  TableJudge judge;
  auto corpus = five_records();
  corpus.records.push_back(record("r6", "Unscripted summary.", {3}));
  const auto dir = std::filesystem::temp_directory_path() / ("sumfeat_judge_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  DiskCache cache(dir);
  JudgeOptions opts;
  opts.concurrency = 6;
  opts.cache = &cache;
  const auto results = judge_corpus(corpus, Dimension::kRelevance, std::nullopt, judge, opts);
  ASSERT_EQ(results.size(), 6u);
  const double expected[] = {2, 1, 4, 3, 5};
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(results[i].record_id, "r" + std::to_string(i + 1));
    ASSERT_TRUE(results[i].score) << results[i].error;
    EXPECT_EQ(*results[i].score, expected[i]);
    EXPECT_EQ(results[i].judge_id, "scripted");
  }
  EXPECT_FALSE(results[5].score);
  EXPECT_NE(results[5].error.find("no score"), std::string::npos);
  EXPECT_EQ(judge.calls.load(), 6);

  judge_corpus(corpus, Dimension::kRelevance, std::nullopt, judge, opts);
  EXPECT_EQ(judge.calls.load(), 6);

  const auto rated = apply_judge_results(corpus, results);
  EXPECT_EQ(rated.records[0].model_ratings.at({"scripted", Dimension::kRelevance}), 2.0);
  EXPECT_EQ(rated.records[5].model_ratings.count({"scripted", Dimension::kRelevance}), 0u);
  std::filesystem::remove_all(dir);
}

TEST(JudgeCorpus, AuthFailureAborts) {
  AuthFailingJudge judge;
  EXPECT_THROW(judge_corpus(five_records(), Dimension::kCoherence, std::nullopt, judge), ProviderError);
}

TEST(JudgeCorpus, ResultsJsonl) {
  TableJudge judge;
  const auto results = judge_corpus(five_records(), Dimension::kRelevance,
                                    default_hint(Dimension::kRelevance), judge);
  const auto text = judge_results_jsonl(results, "raw");
  const auto first = nlohmann::json::parse(text.substr(0, text.find('\n')));
  EXPECT_EQ(first.at("record_id"), "r1");
  EXPECT_EQ(first.at("judge_id"), "scripted");
  EXPECT_EQ(first.at("hint"), true);
  EXPECT_EQ(first.at("score"), 1.0);
  EXPECT_EQ(first.at("raw_response_path"), "raw/" + results[0].prompt_hash + ".txt");
}

TEST(Alignment, StubbedTableThree) {
  // Human means 1..5. Without the hint the judge says 2 1 4 3 5: Pearson and
  // Spearman 8/10, Kendall (8 - 2)/10. With the hint 1 2 3 5 4: 9/10, 9/10, 8/10.
  TableJudge judge;
  Corpus corpus = five_records();
  for (bool hint : {false, true}) {
    const auto h = hint ? std::optional<HintSpec>(default_hint(Dimension::kRelevance)) : std::nullopt;
    corpus = apply_judge_results(corpus, judge_corpus(corpus, Dimension::kRelevance, h, judge));
  }
  const std::vector<JudgeVariant> variants = {parse_judge_variant("scripted"),
                                              parse_judge_variant("scripted+hint")};
  const auto report = alignment_report(corpus, variants, {Dimension::kRelevance});
  const auto& plain = report.at(variants[0], Dimension::kRelevance);
  const auto& hinted = report.at(variants[1], Dimension::kRelevance);
  EXPECT_NEAR(plain.pearson.coefficient, 0.8, 1e-12);
  EXPECT_NEAR(plain.spearman.coefficient, 0.8, 1e-12);
  EXPECT_NEAR(plain.kendall.coefficient, 0.6, 1e-12);
  EXPECT_NEAR(hinted.pearson.coefficient, 0.9, 1e-12);
  EXPECT_NEAR(hinted.spearman.coefficient, 0.9, 1e-12);
  EXPECT_NEAR(hinted.kendall.coefficient, 0.8, 1e-12);

  const std::string expected = "Evaluator" + std::string(6, ' ') + "  Relevance" + std::string(21, ' ') +
                               "\n" + std::string(17, ' ') + "Pearson   Spearman  Kendall   \n" +
                               "scripted" + std::string(7, ' ') + "  0.80      0.80      0.60\n" +
                               "scripted + hint  0.90      0.90      0.80\n";
  EXPECT_EQ(format_alignment_table(report), expected);
}

TEST(Alignment, UndefinedShowsNotAvailable) {
  Corpus corpus = five_records();
  for (auto& r : corpus.records) r.model_ratings[{"flat", Dimension::kRelevance}] = 3.0;
  const auto report = alignment_report(corpus, {parse_judge_variant("flat")}, {Dimension::kRelevance});
  EXPECT_NE(format_alignment_table(report).find("flat" + std::string(5, ' ') + "  n/a       n/a       n/a"),
            std::string::npos);
  EXPECT_THROW(alignment_report(corpus, {parse_judge_variant("ghost")}, {Dimension::kRelevance}), CorpusError);
}

TEST(Alignment, VariantParsing) {
  EXPECT_EQ(parse_judge_variant("gpt-4o-mini+hint").judge_id, "gpt-4o-mini");
  EXPECT_TRUE(parse_judge_variant("gpt-4o-mini+hint").hint);
  EXPECT_FALSE(parse_judge_variant("gpt-4o-mini").hint);
  EXPECT_EQ(parse_judge_variant("m+hint").rating_key(), "m+hint");
  EXPECT_THROW(parse_judge_variant(""), ConfigError);
}

TEST(LiveJudge, SmokeAgainstRealModel) {
  const char* endpoint = std::getenv("SUMFEAT_LIVE_JUDGE_ENDPOINT");
  const char* model = std::getenv("SUMFEAT_LIVE_JUDGE_MODEL");
  const char* key = std::getenv("SUMFEAT_LIVE_JUDGE_API_KEY");
  const char* corpus_path = std::getenv("SUMFEAT_LIVE_CORPUS");
  if (!endpoint || !model || !key || !corpus_path) {
    GTEST_SKIP() << "set SUMFEAT_LIVE_JUDGE_ENDPOINT, SUMFEAT_LIVE_JUDGE_MODEL, "
                    "SUMFEAT_LIVE_JUDGE_API_KEY and SUMFEAT_LIVE_CORPUS to run";
  }
  Corpus corpus = load_corpus(corpus_path);
  ASSERT_GE(corpus.size(), 50u);
  corpus.records.resize(50);
  HttpEndpoint ep;
  ep.base_url = endpoint;
  ep.model = model;
  ep.api_key = key;
  HttpChatProvider judge(ep, 42);
  JudgeOptions opts;
  opts.concurrency = 4;
  std::vector<JudgeResult> plain, hinted;
  for (bool hint : {false, true}) {
    const auto h = hint ? std::optional<HintSpec>(default_hint(Dimension::kRelevance)) : std::nullopt;
    auto results = judge_corpus(corpus, Dimension::kRelevance, h, judge, opts);
    corpus = apply_judge_results(corpus, results);
    (hint ? hinted : plain) = std::move(results);
  }
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    EXPECT_NE(plain[i].prompt_hash, hinted[i].prompt_hash);
    EXPECT_TRUE(plain[i].score) << plain[i].error;
    EXPECT_TRUE(hinted[i].score) << hinted[i].error;
  }
  const std::vector<JudgeVariant> variants = {{judge.model_id(), false}, {judge.model_id(), true}};
  const auto report = alignment_report(corpus, variants, {Dimension::kRelevance});
  EXPECT_EQ(report.rows.size(), 2u);
  std::cout << format_alignment_table(report);
}
