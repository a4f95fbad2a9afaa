// SPDX-License-Identifier: Apache-2.0
//
// Classification metrics, bootstrap dispersion, cross-model rank
// aggregation, and report rendering.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ehrlm/downstream.hpp"

namespace ehrlm {

enum class Metric { F1, RocAuc, PrAuc };
inline constexpr std::array<Metric, 3> kMetrics = {Metric::F1, Metric::RocAuc, Metric::PrAuc};

/// "F1", "ROC-AUC", "PRC-AUC".
std::string metric_name(Metric m);
std::optional<Metric> parse_metric(std::string_view name);

/// F1 of (score >= threshold) against labels in {0,1}; 0 when precision and
/// recall are both 0. Throws EmptyEval.
double f1_score(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

/// Probability a random positive outscores a random negative, ties counted
/// half. Throws DegenerateLabels unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Average precision, sum over descending distinct thresholds of
/// (R_n - R_{n-1}) * P_n. Throws DegenerateLabels without positives.
double pr_auc(std::span<const double> scores, std::span<const int> labels);

double compute_metric(Metric m, std::span<const double> scores, std::span<const int> labels,
                      double threshold = 0.5);

struct MetricResult {
  std::string metric;
  double point = 0.0;  // on the full sample
  double mean = 0.0;
  double std = 0.0;    // population standard deviation over resamples
  std::size_t n_boot = 0;
  std::uint64_t seed = 0;
  std::size_t redraws = 0;
};

struct BootstrapOptions {
  std::size_t n_boot = 1000;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  /// Maximum redraws for a single resample on which the metric is undefined.
  std::size_t max_retries = 1000;
};

/// Resamples rows with replacement, redrawing resamples without a positive
/// (and, for ROC-AUC, without a negative). Throws ConfigError for n_boot = 0 and
/// DegenerateLabels when the metric is undefined on the full sample or a
/// resample exceeds max_retries.
MetricResult bootstrap_metric(std::span<const double> scores, std::span<const int> labels, Metric metric,
                              const BootstrapOptions& options = {});

enum class TiePolicy { ListingOrder, Fractional };
std::optional<TiePolicy> parse_tie_policy(std::string_view name);
std::string tie_policy_name(TiePolicy p);

/// values[metric][task][model]; nullopt marks a missing cell.
struct ScoreTable {
  std::vector<std::string> models;
  std::vector<std::string> tasks;
  std::vector<std::string> metrics;
  std::vector<std::vector<std::vector<std::optional<double>>>> values;

  /// Long-format CSV with columns metric,task,model,value. Models, tasks and
  /// metrics keep their first-appearance order.
  static ScoreTable read_csv(const std::filesystem::path& path);
};

struct RankTable {
  std::vector<std::string> models;
  std::vector<std::string> metrics;
  TiePolicy policy = TiePolicy::ListingOrder;
  /// ranks[metric][task][model], 1 = best.
  std::vector<std::vector<std::vector<double>>> ranks;
  /// average[metric][model] over tasks.
  std::vector<std::vector<double>> average;
  /// Mean of the per-metric averages.
  std::vector<double> overall;
};

/// Ranks models per (metric, task) by descending value. Throws
/// IncompleteTable for a missing cell.
RankTable rank_models(const ScoreTable& table, TiePolicy policy = TiePolicy::ListingOrder);

nlohmann::json to_json(const RankTable& ranks);
/// Model | metric columns | Overall Average, three decimals.
std::string render_rank_table(const RankTable& ranks);

/// Metric results for one model across the antibiotic tasks.
struct EvalResults {
  std::string model_name;
  /// by task, then metric; a metric missing for a task carries `reason`.
  struct Cell {
    std::string task;
    std::string metric;
    std::optional<MetricResult> result;
    std::string reason;
    std::size_t n = 0;
    std::size_t positives = 0;
  };
  std::vector<Cell> cells;
  BootstrapOptions options;
};

/// Evaluates every trained label of a predictions file; rows with an
/// Untested label or missing probability are excluded per label. Throws
/// EmptyEval if no label can be evaluated.
EvalResults evaluate_predictions(const std::vector<PredictionRow>& rows, const BootstrapOptions& options,
                                 const std::string& model_name = "model");

nlohmann::json to_json(const EvalResults& results);
std::string render_results_table(const EvalResults& results);

/// Writes report.json and report.txt under `out_dir`. Throws IoError.
void render_report(const std::optional<EvalResults>& results, const std::optional<RankTable>& ranks,
                   const std::filesystem::path& out_dir);

}  // namespace ehrlm
