// sumfeat: feature extraction, correlation analysis and LLM judging for
// source/summary corpora.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "sumfeat/pipeline.hpp"

namespace {

std::vector<sumfeat::Dimension> dimensions_from(const std::vector<std::string>& names) {
  if (names.empty()) return {sumfeat::kAllDimensions.begin(), sumfeat::kAllDimensions.end()};
  std::vector<sumfeat::Dimension> out;
  for (const auto& n : names) out.push_back(sumfeat::parse_dimension(n));
  return out;
}

void report(const sumfeat::CommandOutcome& outcome) {
  for (const auto& w : outcome.warnings) spdlog::warn("{}", w);
  for (const auto& f : outcome.files) std::cout << f.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Statistical features and LLM-judge alignment for summarization corpora"};
  app.set_version_flag("--version", std::string(sumfeat::kVersion));
  app.require_subcommand(1);

  std::string config_path;
  std::string corpus_path;
  std::string output_dir;
  std::string familiar_words;
  std::optional<std::size_t> concurrency;
  bool verbose = false;
  app.add_option("-c,--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--corpus", corpus_path, "Corpus file (overrides config)");
  app.add_option("-o,--output-dir", output_dir, "Output directory (overrides config)");
  app.add_option("--familiar-words", familiar_words, "Dale-Chall familiar word list");
  app.add_option("--concurrency", concurrency, "Concurrent provider calls")
      ->check(CLI::Range(1, 256));
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  auto* extract = app.add_subcommand("extract", "Compute the feature table");
  std::vector<std::string> features;
  extract->add_option("--features", features, "Features to compute (default: all)")->delimiter(',');

  auto* correlate = app.add_subcommand("correlate", "Correlate features with ratings");
  std::string table_path;
  std::string sort_key = "human";
  std::vector<std::string> dims;
  correlate->add_option("--table", table_path, "Feature table (default: <output>/features.csv)");
  correlate->add_option("--sort-key", sort_key, "Rater whose coefficients order the rows");
  correlate->add_option("--dimension", dims, "Dimensions (default: all)")->delimiter(',');
  correlate->add_option("--features", features, "Feature subset")->delimiter(',');

  auto* lowess = app.add_subcommand("lowess", "Export a LOWESS curve");
  sumfeat::LowessCommandOptions lowess_opts;
  std::string lowess_dim = "relevance";
  std::optional<double> fraction;
  std::optional<int> iterations;
  std::optional<std::size_t> bins;
  lowess->add_option("--table", table_path, "Feature table (default: <output>/features.csv)");
  lowess->add_option("--feature", lowess_opts.feature, "Feature column")->required();
  lowess->add_option("--rater", lowess_opts.rater, "Rater id (default: human)");
  lowess->add_option("--dimension", lowess_dim, "relevance or coherence");
  lowess->add_option("--fraction", fraction, "Smoothing span")->check(CLI::Range(0.0, 1.0));
  lowess->add_option("--iterations", iterations, "Robustness iterations")->check(CLI::Range(0, 20));
  lowess->add_option("--bins", bins, "Average into quantile bins before fitting");
  std::string lowess_out;
  lowess->add_option("--out", lowess_out, "Output file");

  auto* judge = app.add_subcommand("judge", "Score the corpus with the LLM judge");
  std::string judge_dim;
  bool hint = false;
  std::string corpus_out;
  judge->add_option("--dimension", judge_dim, "relevance or coherence")->required();
  judge->add_flag("--hint", hint, "Add the metric hint to the prompt");
  judge->add_option("--corpus-out", corpus_out, "Rated corpus (default: <output>/corpus_rated.jsonl)");

  auto* rep = app.add_subcommand("report", "Judge/human alignment report");
  std::vector<std::string> variants;
  rep->add_option("--variant", variants, "Judge variant, e.g. gpt-4o-mini or gpt-4o-mini+hint")
      ->required();
  rep->add_option("--dimension", dims, "Dimensions (default: all)")->delimiter(',');

  auto* imp = app.add_subcommand("import-summeval", "Convert SummEval annotations to a corpus");
  std::string imp_in;
  std::string imp_out;
  imp->add_option("input", imp_in, "model_annotations.aligned.jsonl")->required()->check(CLI::ExistingFile);
  imp->add_option("output", imp_out, "Corpus file to write")->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_default_logger(spdlog::stderr_color_mt("sumfeat"));
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*imp) {
      const auto corpus = sumfeat::import_summeval(sumfeat::read_file(imp_in), imp_in);
      sumfeat::save_corpus(corpus, imp_out);
      spdlog::info("imported {} records", corpus.size());
      std::cout << imp_out << "\n";
      return sumfeat::kExitOk;
    }

    sumfeat::RunConfig config;
    if (!config_path.empty()) config = sumfeat::load_config(config_path);
    if (!corpus_path.empty()) config.corpus_path = corpus_path;
    if (!output_dir.empty()) config.output_dir = output_dir;
    if (!familiar_words.empty()) config.familiar_words_path = familiar_words;
    if (concurrency) config.concurrency = *concurrency;
    if (!features.empty() && *extract) config.features = features;
    if (fraction) config.lowess.fraction = *fraction;
    if (iterations) config.lowess.iterations = *iterations;
    if (bins) config.lowess_bins = *bins;
    if (config.corpus_path.empty() && !*correlate && !*lowess) {
      throw sumfeat::ConfigError("no corpus given (use --corpus or the config file)");
    }

    sumfeat::CommandOutcome outcome;
    if (*extract) {
      outcome = sumfeat::cmd_extract(config);
    } else if (*correlate) {
      sumfeat::CorrelateOptions o;
      o.table_path = table_path;
      o.sort_key = sort_key;
      o.dimensions = dimensions_from(dims);
      o.features = features;
      outcome = sumfeat::cmd_correlate(config, o);
    } else if (*lowess) {
      lowess_opts.table_path = table_path;
      lowess_opts.dimension = sumfeat::parse_dimension(lowess_dim);
      lowess_opts.output_file = lowess_out;
      outcome = sumfeat::cmd_lowess(config, lowess_opts);
    } else if (*judge) {
      sumfeat::JudgeCommandOptions o;
      o.dimension = sumfeat::parse_dimension(judge_dim);
      o.hint = hint;
      o.corpus_out = corpus_out;
      outcome = sumfeat::cmd_judge(config, o);
    } else if (*rep) {
      sumfeat::ReportOptions o;
      for (const auto& v : variants) o.variants.push_back(sumfeat::parse_judge_variant(v));
      o.dimensions = dimensions_from(dims);
      outcome = sumfeat::cmd_report(config, o);
    }
    report(outcome);
    if (outcome.exit_code == sumfeat::kExitPartialFailure) {
      spdlog::warn("{} records had provider failures; outputs were written", outcome.warnings.size());
    }
    return outcome.exit_code;
  } catch (const sumfeat::ConfigError& e) {
    spdlog::error("{}", e.what());
    return sumfeat::kExitConfig;
  } catch (const sumfeat::CorpusError& e) {
    spdlog::error("{}", e.what());
    return sumfeat::kExitConfig;
  } catch (const sumfeat::ProviderError& e) {
    spdlog::error("provider: {}", e.what());
    return e.kind() == sumfeat::ProviderErrorKind::kAuth ? sumfeat::kExitConfig : sumfeat::kExitFatal;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return sumfeat::kExitFatal;
  }
}
