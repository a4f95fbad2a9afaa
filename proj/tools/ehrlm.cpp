// SPDX-License-Identifier: Apache-2.0
//
// ehrlm <subcommand> [--config FILE] [--set key=value]... [--seed N]
//       [--profile full|desk] [--out-dir DIR]
//
// Exit status: 0 success, 1 module error, 2 usage error.
#include <functional>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "ehrlm/config.hpp"
#include "ehrlm/error.hpp"
#include "ehrlm/pipeline.hpp"

namespace {

struct Globals {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string profile;
  std::string out_dir = "run";
};

void add_globals(CLI::App& app, Globals& g) {
  app.add_option("-c,--config", g.config, "JSON configuration file");
  app.add_option("--set", g.overrides, "Override one key, key=value (repeatable)");
  app.add_option("--seed", g.seed, "Run seed");
  app.add_option("--profile", g.profile, "Default profile")->check(CLI::IsMember({"full", "desk"}));
  app.add_option("-o,--out-dir", g.out_dir, "Run directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EHR language-model pipeline"};
  app.require_subcommand(1);
  Globals g;
  add_globals(app, g);

  std::optional<std::string> predictions, scores;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"ingest", "Load the tables, build the cohort and split it by patient"},
      {"serialize", "Render each cohort patient as a text document"},
      {"corpus-stats", "Mix scientific and EHR documents into the pretraining corpus"},
      {"train-tokenizer", "Train the base and domain BPE vocabularies"},
      {"merge-vocab", "Append novel domain tokens to the base vocabulary"},
      {"pretrain", "Masked-language-model pretraining"},
      {"embed", "Pool document embeddings from the best checkpoint"},
      {"train-downstream", "Fit per-antibiotic boosted trees and predict the test split"},
      {"evaluate", "Bootstrap F1, ROC-AUC and PRC-AUC on a predictions file"},
      {"rank", "Average-rank a score table"},
      {"probe", "Sample probe questions and query a chat endpoint"},
      {"pipeline", "Run every stage in order"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->fallthrough();
    subs[name] = sub;
  }
  subs["evaluate"]->add_option("--predictions", predictions, "Predictions CSV (default: the run's)");
  subs["rank"]->add_option("--scores", scores, "Score table CSV (default: eval.scores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    auto overrides = g.overrides;
    if (g.seed) overrides.push_back("seed=" + std::to_string(*g.seed));
    const auto cfg = ehrlm::parse_config(g.config, overrides,
                                         g.profile.empty() ? std::nullopt : ehrlm::parse_profile(g.profile));
    ehrlm::Pipeline p(cfg, g.out_dir, std::cout);
    const std::string cmd = app.get_subcommands().front()->get_name();
    const std::map<std::string, std::function<void()>> run = {
        {"ingest", [&] { p.ingest(); }},
        {"serialize", [&] { p.serialize(); }},
        {"corpus-stats", [&] { p.corpus_stats(); }},
        {"train-tokenizer", [&] { p.train_tokenizer(); }},
        {"merge-vocab", [&] { p.merge_vocab(); }},
        {"pretrain", [&] { p.pretrain(); }},
        {"embed", [&] { p.embed(); }},
        {"train-downstream", [&] { p.train_downstream(); }},
        {"evaluate", [&] { p.evaluate(predictions ? std::optional<std::filesystem::path>(*predictions) : std::nullopt); }},
        {"rank", [&] { p.rank(scores ? std::optional<std::filesystem::path>(*scores) : std::nullopt); }},
        {"probe", [&] { p.probe(); }},
        {"pipeline", [&] { p.run_all(); }},
    };
    run.at(cmd)();
  } catch (const ehrlm::Error& e) {
    std::cerr << e.module() << ": " << e.name() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "ehrlm: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
