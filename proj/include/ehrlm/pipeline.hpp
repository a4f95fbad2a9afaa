// SPDX-License-Identifier: Apache-2.0
//
// The CLI stages. Each stage reads its inputs from earlier stages' output
// directories under one run root and writes its own directory:
//
//   ingest/      cohort/*.csv, splits.csv, report.json
//   serialize/   documents.jsonl, template.json
//   corpus/      corpus.jsonl, stats.json
//   tokenizer/   base.{vocab,merges}, domain.{vocab,merges}, report.json
//   vocab/       merged.{vocab,merges}, report.json
//   pretrain/    config.json, log.jsonl, best.ckpt, last.ckpt, report.json
//   embed/       features.csv
//   downstream/  gbdt.json, predictions.csv, report.json
//   eval/        report.json, report.txt
//   rank/        report.json, report.txt
//   probe/       samples.jsonl, transcript.jsonl, report.json
#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ehrlm/config.hpp"

namespace ehrlm {

/// Sub-stream ids under the run seed.
enum class SeedStream : std::uint64_t { Split = 1, Corpus = 2, Model = 3, Train = 4, Bootstrap = 5, Probe = 6 };
std::uint64_t stage_seed(const PipelineConfig& cfg, SeedStream stream);

class Pipeline {
 public:
  /// `progress` receives one-line stage summaries.
  Pipeline(PipelineConfig cfg, std::filesystem::path root, std::ostream& progress);

  const PipelineConfig& config() const { return cfg_; }
  std::filesystem::path dir(const std::string& stage) const { return root_ / stage; }

  void ingest();
  void serialize();
  void corpus_stats();
  void train_tokenizer();
  void merge_vocab();
  void pretrain();
  void embed();
  void train_downstream();
  /// Defaults to downstream/predictions.csv.
  void evaluate(const std::optional<std::filesystem::path>& predictions = std::nullopt);
  /// Defaults to eval.scores; throws ConfigError when neither is set.
  void rank(const std::optional<std::filesystem::path>& scores = std::nullopt);
  /// Always writes samples; queries only when probe.endpoint is set.
  void probe();
  /// Every stage in order; rank only when eval.scores is set.
  void run_all();

 private:
  PipelineConfig cfg_;
  std::filesystem::path root_;
  std::ostream& out_;
};

}  // namespace ehrlm
