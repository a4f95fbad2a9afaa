// SPDX-License-Identifier: Apache-2.0
//
// Document embeddings and per-antibiotic gradient-boosted trees.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ehrlm/encoder.hpp"
#include "ehrlm/ingest.hpp"
#include "ehrlm/serializer.hpp"
#include "ehrlm/tokenizer.hpp"

namespace ehrlm {

/// Row-major patients × width matrix.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
  std::vector<std::string> row_ids;
  std::string pooling;

  const double* row(std::size_t r) const { return data.data() + r * cols; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// One pooled vector per document, in document order; row ids are the
/// documents' patient ids (doc ids when absent). A document longer than the
/// model's window is cut into consecutive windows of max_len - 2 subwords,
/// each wrapped in CLS/SEP; the first `max_windows` (0: all) are pooled and
/// averaged. max_windows = 1 is plain truncation. Propagates EmptyContent.
FeatureMatrix embed_documents(const Encoder<float>& model, const std::vector<SerializedDocument>& docs,
                              const Vocabulary& vocab, PoolMode mode, std::size_t max_windows = 1);

void write_features(const FeatureMatrix& features, const std::filesystem::path& path);
FeatureMatrix read_features(const std::filesystem::path& path);

/// Patients × 8 susceptibility labels in kAntibiotics order.
struct LabelPanel {
  std::vector<std::string> row_ids;
  std::vector<SusceptibilityPanel> rows;

  std::optional<std::size_t> find(const std::string& id) const;
};

/// Per patient, per antibiotic: the result from the latest encounter that
/// tested it; Untested when none did.
LabelPanel label_panel(const EhrDataset& cohort);

struct GbdtParams {
  std::size_t rounds = 200;
  std::size_t max_depth = 6;
  double shrinkage = 0.1;
  double lambda = 1.0;
  std::size_t min_samples_leaf = 1;
  double prior_clamp = 1e-3;

  void validate() const;
};

/// Binary regression tree as flat node arrays; feature < 0 marks a leaf.
/// Rows with x[feature] < threshold go left.
struct RegressionTree {
  std::vector<std::int32_t> feature;
  std::vector<double> threshold;
  std::vector<std::int32_t> left;
  std::vector<std::int32_t> right;
  std::vector<double> value;

  double predict(const double* x) const;
  std::size_t depth() const;
};

struct LabelModel {
  bool trained = false;
  double base_score = 0.0;
  std::vector<RegressionTree> trees;
  /// Mean training logistic loss before the first tree and after each tree.
  std::vector<double> loss_history;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

struct GbdtModel {
  GbdtParams params;
  std::size_t n_features = 0;
  std::array<LabelModel, kNumAntibiotics> labels;
  std::vector<std::string> warnings;
};

/// Fits one logistic-loss booster per antibiotic on the rows assigned to
/// train. Rows Untested for a label are excluded from that label. A label
/// with no tested train rows is left untrained (and warned about).
GbdtModel train_gbdt(const FeatureMatrix& features, const LabelPanel& labels,
                     const SplitAssignment& split, const GbdtParams& params = {});

/// Same, training on every row with a tested label.
GbdtModel train_gbdt(const FeatureMatrix& features, const LabelPanel& labels,
                     const GbdtParams& params = {});

/// Raw margin base + shrinkage·Σ leaf for one label.
double predict_margin(const GbdtModel& model, std::size_t label, const double* x);

/// Rows × 8 probabilities; nullopt for untrained labels. Throws FeatureError
/// when the width differs from training.
std::vector<std::array<std::optional<double>, kNumAntibiotics>> predict(const GbdtModel& model,
                                                                        const FeatureMatrix& features);

nlohmann::json to_json(const GbdtModel& model);
GbdtModel gbdt_from_json(const nlohmann::json& j);
void save_gbdt(const GbdtModel& model, const std::filesystem::path& path);
GbdtModel load_gbdt(const std::filesystem::path& path);

/// The downstream/evaluation contract: header
/// patient_id,<name>_prob x8,<name>_label x8. Missing probabilities are "NA";
/// Untested labels are -1.
struct PredictionRow {
  std::string patient_id;
  std::array<std::optional<double>, kNumAntibiotics> prob;
  SusceptibilityPanel label;
};

std::vector<std::string> predictions_header();
void write_predictions(const std::vector<PredictionRow>& rows, const std::filesystem::path& path);
/// Throws SchemaError on a wrong header or malformed values.
std::vector<PredictionRow> read_predictions(const std::filesystem::path& path);

double sigmoid(double x);
double logit(double p);

}  // namespace ehrlm
