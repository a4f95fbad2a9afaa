// SPDX-License-Identifier: Apache-2.0
#include "ehrlm/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "ehrlm/csv.hpp"
#include "ehrlm/error.hpp"
#include "ehrlm/text.hpp"

namespace ehrlm {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

FeatureMatrix embed_documents(const Encoder<float>& model, const std::vector<SerializedDocument>& docs,
                              const Vocabulary& vocab, PoolMode mode, std::size_t max_windows) {
  FeatureMatrix fm;
  fm.rows = docs.size();
  fm.cols = model.config().hidden;
  fm.pooling = pool_mode_name(mode);
  fm.data.reserve(fm.rows * fm.cols);
  const std::size_t span = model.config().max_len - 2;
  CachedEncoder encoder(vocab);
  std::vector<double> acc(fm.cols);
  for (const auto& doc : docs) {
    const auto full = encoder.encode(doc.text, std::numeric_limits<std::size_t>::max());
    const std::size_t content = full.ids.size() - 2;
    std::size_t windows = std::max<std::size_t>(1, (content + span - 1) / span);
    if (max_windows > 0) windows = std::min(windows, max_windows);
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t w = 0; w < windows; ++w) {
      TokenSequence seq;
      seq.ids.push_back(kClsId);
      const auto begin = full.ids.begin() + 1 + static_cast<std::ptrdiff_t>(w * span);
      const auto end = full.ids.begin() + 1 + static_cast<std::ptrdiff_t>(std::min(content, (w + 1) * span));
      seq.ids.insert(seq.ids.end(), begin, end);
      seq.ids.push_back(kSepId);
      const auto vec = pool_embeddings(model, seq, mode);
      for (std::size_t j = 0; j < fm.cols; ++j) acc[j] += static_cast<double>(vec[j]);
    }
    for (const double v : acc) fm.data.push_back(static_cast<double>(static_cast<float>(v / static_cast<double>(windows))));
    fm.row_ids.push_back(doc.patient_id.value_or(doc.doc_id));
  }
  return fm;
}

void write_features(const FeatureMatrix& f, const std::filesystem::path& path) {
  csv::Table t;
  t.header.push_back("patient_id");
  for (std::size_t c = 0; c < f.cols; ++c) t.header.push_back("f" + std::to_string(c));
  for (std::size_t r = 0; r < f.rows; ++r) {
    std::vector<std::string> row{f.row_ids[r]};
    for (std::size_t c = 0; c < f.cols; ++c) row.push_back(text::format_double(f.at(r, c)));
    t.rows.push_back(std::move(row));
  }
  csv::write_file(path, t);
}

FeatureMatrix read_features(const std::filesystem::path& path) {
  const auto t = csv::read_file(path);
  if (t.header.empty() || t.header[0] != "patient_id") {
    throw SchemaError("downstream", path.string() + ": first column must be patient_id");
  }
  FeatureMatrix f;
  f.cols = t.header.size() - 1;
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size()) throw SchemaError("downstream", path.string() + ": ragged row");
    f.row_ids.push_back(row[0]);
    for (std::size_t c = 1; c < row.size(); ++c) {
      const auto v = text::parse_number(row[c]);
      if (!v || !std::isfinite(*v)) throw SchemaError("downstream", path.string() + ": bad value '" + row[c] + "'");
      f.data.push_back(*v);
    }
  }
  f.rows = f.row_ids.size();
  return f;
}

std::optional<std::size_t> LabelPanel::find(const std::string& id) const {
  const auto it = std::find(row_ids.begin(), row_ids.end(), id);
  if (it == row_ids.end()) return std::nullopt;
  return static_cast<std::size_t>(it - row_ids.begin());
}

LabelPanel label_panel(const EhrDataset& cohort) {
  LabelPanel panel;
  for (const auto& p : cohort.patients) {
    auto labels = untested_panel();
    for (const auto& enc : p.admissions) {  // admissions are in arrival order
      for (std::size_t k = 0; k < kNumAntibiotics; ++k) {
        if (enc.susceptibility[k] != Susceptibility::Untested) labels[k] = enc.susceptibility[k];
      }
    }
    panel.row_ids.push_back(p.patient_id);
    panel.rows.push_back(labels);
  }
  return panel;
}

void GbdtParams::validate() const {
  if (max_depth == 0) throw ConfigError("downstream", "max_depth must be at least 1");
  if (!(shrinkage > 0.0)) throw ConfigError("downstream", "shrinkage must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("downstream", "lambda must be nonnegative");
  if (min_samples_leaf == 0) throw ConfigError("downstream", "min_samples_leaf must be at least 1");
  if (!(prior_clamp > 0.0 && prior_clamp < 0.5)) throw ConfigError("downstream", "prior_clamp must lie in (0, 0.5)");
}

double RegressionTree::predict(const double* x) const {
  std::int32_t n = 0;
  while (feature[static_cast<std::size_t>(n)] >= 0) {
    const auto i = static_cast<std::size_t>(n);
    n = x[feature[i]] < threshold[i] ? left[i] : right[i];
  }
  return value[static_cast<std::size_t>(n)];
}

std::size_t RegressionTree::depth() const {
  std::vector<std::size_t> d(feature.size(), 0);
  std::size_t deepest = 0;
  for (std::size_t i = 0; i < feature.size(); ++i) {  // children follow parents
    if (feature[i] >= 0) {
      d[static_cast<std::size_t>(left[i])] = d[i] + 1;
      d[static_cast<std::size_t>(right[i])] = d[i] + 1;
    }
    deepest = std::max(deepest, d[i]);
  }
  return deepest;
}

namespace {

double mean_log_loss(const std::vector<double>& margin, const std::vector<double>& y) {
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    // log(1 + e^{-m}) for y=1, log(1 + e^{m}) for y=0, computed stably.
    const double z = y[i] > 0.5 ? -margin[i] : margin[i];
    total += z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  }
  return total / static_cast<double>(y.size());
}

struct Candidate {
  double gain = 0.0;
  std::int32_t feature = -1;
  double threshold = 0.0;
};

// Level-wise exact greedy tree on rows `rows` of `x` (row-major, `cols` wide).
RegressionTree fit_tree(const std::vector<const double*>& x, std::size_t cols,
                        const std::vector<std::vector<std::uint32_t>>& sorted,
                        const std::vector<double>& g, const std::vector<double>& h,
                        const GbdtParams& p) {
  const std::size_t n = x.size();
  RegressionTree tree;
  auto add_node = [&]() {
    tree.feature.push_back(-1);
    tree.threshold.push_back(0.0);
    tree.left.push_back(-1);
    tree.right.push_back(-1);
    tree.value.push_back(0.0);
    return static_cast<std::int32_t>(tree.feature.size() - 1);
  };
  add_node();
  std::vector<std::int32_t> node_of(n, 0);
  std::vector<std::int32_t> frontier = {0};

  auto leaf_value = [&](double G, double H) { return -G / (H + p.lambda); };
  std::vector<double> G(1, 0.0), H(1, 0.0);
  std::vector<std::size_t> count(1, n);
  for (std::size_t i = 0; i < n; ++i) {
    G[0] += g[i];
    H[0] += h[i];
  }

  for (std::size_t depth = 0; depth < p.max_depth && !frontier.empty(); ++depth) {
    const std::size_t nodes = tree.feature.size();
    std::vector<char> open(nodes, 0);
    for (auto f : frontier) open[static_cast<std::size_t>(f)] = 1;
    std::vector<Candidate> best(nodes);
    std::vector<double> gl(nodes), hl(nodes), last(nodes);
    std::vector<std::size_t> cl(nodes);
    for (std::size_t f = 0; f < cols; ++f) {
      std::fill(gl.begin(), gl.end(), 0.0);
      std::fill(hl.begin(), hl.end(), 0.0);
      std::fill(cl.begin(), cl.end(), 0);
      for (const auto r : sorted[f]) {
        const auto node = static_cast<std::size_t>(node_of[r]);
        if (!open[node]) continue;
        const double v = x[r][f];
        if (cl[node] > 0 && v > last[node] && cl[node] >= p.min_samples_leaf &&
            count[node] - cl[node] >= p.min_samples_leaf) {
          const double gr = G[node] - gl[node], hr = H[node] - hl[node];
          const double gain = gl[node] * gl[node] / (hl[node] + p.lambda) + gr * gr / (hr + p.lambda) -
                              G[node] * G[node] / (H[node] + p.lambda);
          if (gain > best[node].gain) {
            double thr = last[node] + (v - last[node]) / 2;
            if (!(thr > last[node])) thr = v;
            best[node] = {gain, static_cast<std::int32_t>(f), thr};
          }
        }
        gl[node] += g[r];
        hl[node] += h[r];
        ++cl[node];
        last[node] = v;
      }
    }

    std::vector<std::int32_t> next;
    for (const auto f : frontier) {
      const auto i = static_cast<std::size_t>(f);
      if (best[i].feature < 0) continue;
      tree.feature[i] = best[i].feature;
      tree.threshold[i] = best[i].threshold;
      const auto l = add_node();
      const auto r = add_node();
      tree.left[i] = l;
      tree.right[i] = r;
      next.push_back(l);
      next.push_back(r);
    }
    if (next.empty()) break;
    G.assign(tree.feature.size(), 0.0);
    H.assign(tree.feature.size(), 0.0);
    count.assign(tree.feature.size(), 0);
    for (std::size_t row = 0; row < n; ++row) {
      auto& node = node_of[row];
      const auto i = static_cast<std::size_t>(node);
      if (tree.feature[i] >= 0 && tree.left[i] >= 0 &&
          static_cast<std::size_t>(tree.left[i]) >= nodes) {
        node = x[row][tree.feature[i]] < tree.threshold[i] ? tree.left[i] : tree.right[i];
      }
      const auto j = static_cast<std::size_t>(node);
      G[j] += g[row];
      H[j] += h[row];
      ++count[j];
    }
    frontier = std::move(next);
  }

  // Leaf values from final node statistics.
  std::vector<double> gs(tree.feature.size(), 0.0), hs(tree.feature.size(), 0.0);
  for (std::size_t row = 0; row < n; ++row) {
    gs[static_cast<std::size_t>(node_of[row])] += g[row];
    hs[static_cast<std::size_t>(node_of[row])] += h[row];
  }
  for (std::size_t i = 0; i < tree.feature.size(); ++i) {
    if (tree.feature[i] < 0) tree.value[i] = leaf_value(gs[i], hs[i]);
  }
  return tree;
}

LabelModel fit_label(const std::vector<const double*>& x, std::size_t cols, const std::vector<double>& y,
                     const GbdtParams& p) {
  LabelModel m;
  m.trained = true;
  for (double v : y) (v > 0.5 ? m.positives : m.negatives) += 1;
  const double prior = std::clamp(static_cast<double>(m.positives) / static_cast<double>(y.size()),
                                  p.prior_clamp, 1.0 - p.prior_clamp);
  m.base_score = logit(prior);
  std::vector<double> margin(y.size(), m.base_score);
  m.loss_history.push_back(mean_log_loss(margin, y));
  if (m.positives == 0 || m.negatives == 0) return m;

  std::vector<std::vector<std::uint32_t>> sorted(cols);
  for (std::size_t f = 0; f < cols; ++f) {
    auto& s = sorted[f];
    s.resize(x.size());
    std::iota(s.begin(), s.end(), 0u);
    std::stable_sort(s.begin(), s.end(), [&](std::uint32_t a, std::uint32_t b) { return x[a][f] < x[b][f]; });
  }
  std::vector<double> g(y.size()), h(y.size());
  for (std::size_t round = 0; round < p.rounds; ++round) {
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double q = sigmoid(margin[i]);
      g[i] = q - y[i];
      h[i] = q * (1.0 - q);
    }
    auto tree = fit_tree(x, cols, sorted, g, h, p);
    for (std::size_t i = 0; i < y.size(); ++i) margin[i] += p.shrinkage * tree.predict(x[i]);
    m.trees.push_back(std::move(tree));
    m.loss_history.push_back(mean_log_loss(margin, y));
  }
  return m;
}

GbdtModel train_rows(const FeatureMatrix& features, const LabelPanel& labels,
                     const std::vector<char>& use_row, const GbdtParams& params) {
  params.validate();
  if (features.cols == 0) throw FeatureError("downstream", "feature matrix has no columns");
  GbdtModel model;
  model.params = params;
  model.n_features = features.cols;
  for (std::size_t k = 0; k < kNumAntibiotics; ++k) {
    std::vector<const double*> x;
    std::vector<double> y;
    for (std::size_t r = 0; r < features.rows; ++r) {
      if (!use_row[r]) continue;
      const auto li = labels.find(features.row_ids[r]);
      if (!li) continue;
      const auto s = labels.rows[*li][k];
      if (s == Susceptibility::Untested) continue;
      x.push_back(features.row(r));
      y.push_back(s == Susceptibility::Susceptible ? 1.0 : 0.0);
    }
    if (y.empty()) {
      model.warnings.push_back(std::string(kAntibiotics[k]) + ": no tested training rows; label skipped");
      continue;
    }
    model.labels[k] = fit_label(x, features.cols, y, params);
    if (model.labels[k].positives == 0 || model.labels[k].negatives == 0) {
      model.warnings.push_back(std::string(kAntibiotics[k]) + ": single-class training labels; prior only");
    }
  }
  return model;
}

}  // namespace

GbdtModel train_gbdt(const FeatureMatrix& features, const LabelPanel& labels,
                     const SplitAssignment& split, const GbdtParams& params) {
  std::vector<char> use(features.rows, 0);
  for (std::size_t r = 0; r < features.rows; ++r) use[r] = split.find(features.row_ids[r]) == Split::Train;
  return train_rows(features, labels, use, params);
}

GbdtModel train_gbdt(const FeatureMatrix& features, const LabelPanel& labels, const GbdtParams& params) {
  return train_rows(features, labels, std::vector<char>(features.rows, 1), params);
}

double predict_margin(const GbdtModel& model, std::size_t label, const double* x) {
  const auto& m = model.labels[label];
  double sum = 0.0;
  for (const auto& t : m.trees) sum += t.predict(x);
  return m.base_score + model.params.shrinkage * sum;
}

std::vector<std::array<std::optional<double>, kNumAntibiotics>> predict(const GbdtModel& model,
                                                                        const FeatureMatrix& features) {
  if (features.cols != model.n_features) {
    throw FeatureError("downstream", "feature width " + std::to_string(features.cols) +
                                         " does not match trained width " + std::to_string(model.n_features));
  }
  std::vector<std::array<std::optional<double>, kNumAntibiotics>> out(features.rows);
  for (std::size_t r = 0; r < features.rows; ++r) {
    for (std::size_t k = 0; k < kNumAntibiotics; ++k) {
      if (model.labels[k].trained) out[r][k] = sigmoid(predict_margin(model, k, features.row(r)));
    }
  }
  return out;
}

nlohmann::json to_json(const GbdtModel& model) {
  nlohmann::json labels = nlohmann::json::array();
  for (std::size_t k = 0; k < kNumAntibiotics; ++k) {
    const auto& m = model.labels[k];
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : m.trees) {
      trees.push_back({{"feature", t.feature}, {"threshold", t.threshold}, {"left", t.left},
                       {"right", t.right}, {"value", t.value}});
    }
    labels.push_back({{"antibiotic", kAntibiotics[k]}, {"trained", m.trained},
                      {"base_score", m.base_score}, {"positives", m.positives},
                      {"negatives", m.negatives}, {"loss_history", m.loss_history},
                      {"trees", trees}});
  }
  const auto& p = model.params;
  return {{"params", {{"rounds", p.rounds}, {"max_depth", p.max_depth}, {"shrinkage", p.shrinkage},
                      {"lambda", p.lambda}, {"min_samples_leaf", p.min_samples_leaf},
                      {"prior_clamp", p.prior_clamp}}},
          {"n_features", model.n_features},
          {"warnings", model.warnings},
          {"labels", labels}};
}

GbdtModel gbdt_from_json(const nlohmann::json& j) {
  try {
    GbdtModel model;
    const auto& p = j.at("params");
    model.params.rounds = p.at("rounds").get<std::size_t>();
    model.params.max_depth = p.at("max_depth").get<std::size_t>();
    model.params.shrinkage = p.at("shrinkage").get<double>();
    model.params.lambda = p.at("lambda").get<double>();
    model.params.min_samples_leaf = p.at("min_samples_leaf").get<std::size_t>();
    model.params.prior_clamp = p.at("prior_clamp").get<double>();
    model.n_features = j.at("n_features").get<std::size_t>();
    model.warnings = j.at("warnings").get<std::vector<std::string>>();
    const auto& labels = j.at("labels");
    if (labels.size() != kNumAntibiotics) throw FeatureError("downstream", "model must have 8 labels");
    for (std::size_t k = 0; k < kNumAntibiotics; ++k) {
      const auto& l = labels[k];
      auto& m = model.labels[k];
      m.trained = l.at("trained").get<bool>();
      m.base_score = l.at("base_score").get<double>();
      m.positives = l.at("positives").get<std::size_t>();
      m.negatives = l.at("negatives").get<std::size_t>();
      m.loss_history = l.at("loss_history").get<std::vector<double>>();
      for (const auto& t : l.at("trees")) {
        RegressionTree tree;
        tree.feature = t.at("feature").get<std::vector<std::int32_t>>();
        tree.threshold = t.at("threshold").get<std::vector<double>>();
        tree.left = t.at("left").get<std::vector<std::int32_t>>();
        tree.right = t.at("right").get<std::vector<std::int32_t>>();
        tree.value = t.at("value").get<std::vector<double>>();
        m.trees.push_back(std::move(tree));
      }
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FeatureError("downstream", std::string("malformed model file: ") + e.what());
  }
}

void save_gbdt(const GbdtModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("downstream", "cannot write " + path.string());
  out << to_json(model).dump() << '\n';
}

GbdtModel load_gbdt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("downstream", "cannot read " + path.string());
  try {
    return gbdt_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FeatureError("downstream", std::string("model file is not JSON: ") + e.what());
  }
}

std::vector<std::string> predictions_header() {
  std::vector<std::string> h{"patient_id"};
  for (auto name : kAntibiotics) h.push_back(std::string(name) + "_prob");
  for (auto name : kAntibiotics) h.push_back(std::string(name) + "_label");
  return h;
}

void write_predictions(const std::vector<PredictionRow>& rows, const std::filesystem::path& path) {
  csv::Table t{predictions_header(), {}};
  for (const auto& r : rows) {
    std::vector<std::string> f{r.patient_id};
    for (const auto& p : r.prob) f.push_back(p ? text::format_double(*p) : "NA");
    for (const auto s : r.label) f.push_back(std::to_string(static_cast<int>(s)));
    t.rows.push_back(std::move(f));
  }
  csv::write_file(path, t);
}

std::vector<PredictionRow> read_predictions(const std::filesystem::path& path) {
  const auto t = csv::read_file(path);
  if (t.header != predictions_header()) {
    throw SchemaError("downstream", path.string() + ": unexpected predictions header");
  }
  std::vector<PredictionRow> rows;
  for (const auto& f : t.rows) {
    if (f.size() != t.header.size()) throw SchemaError("downstream", path.string() + ": ragged row");
    PredictionRow r;
    r.patient_id = f[0];
    for (std::size_t k = 0; k < kNumAntibiotics; ++k) {
      const auto& ptext = f[1 + k];
      if (ptext != "NA") {
        const auto p = text::parse_number(ptext);
        if (!p || !(*p >= 0.0 && *p <= 1.0)) {
          throw SchemaError("downstream", path.string() + ": bad probability '" + ptext + "'");
        }
        r.prob[k] = *p;
      }
      const auto& ltext = f[1 + kNumAntibiotics + k];
      if (ltext == "1") r.label[k] = Susceptibility::Susceptible;
      else if (ltext == "0") r.label[k] = Susceptibility::Resistant;
      else if (ltext == "-1") r.label[k] = Susceptibility::Untested;
      else throw SchemaError("downstream", path.string() + ": bad label '" + ltext + "'");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace ehrlm
