// SPDX-License-Identifier: Apache-2.0
#include "ehrlm/evalbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ehrlm/csv.hpp"
#include "ehrlm/error.hpp"
#include "ehrlm/rng.hpp"
#include "ehrlm/text.hpp"

namespace ehrlm {
namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.empty()) throw EmptyEval("evalbench", "no rows to evaluate");
  if (scores.size() != labels.size()) throw InputError("evalbench", "scores and labels differ in length");
  for (int l : labels) {
    if (l != 0 && l != 1) throw InputError("evalbench", "labels must be 0 or 1");
  }
}

// Row indices sorted by descending score.
std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::string metric_name(Metric m) {
  switch (m) {
    case Metric::F1: return "F1";
    case Metric::RocAuc: return "ROC-AUC";
    case Metric::PrAuc: return "PRC-AUC";
  }
  return "?";
}

std::optional<Metric> parse_metric(std::string_view name) {
  const auto n = text::to_lower(name);
  if (n == "f1") return Metric::F1;
  if (n == "roc-auc" || n == "roc_auc" || n == "rocauc") return Metric::RocAuc;
  if (n == "prc-auc" || n == "pr-auc" || n == "pr_auc" || n == "prc_auc") return Metric::PrAuc;
  return std::nullopt;
}

double f1_score(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_inputs(scores, labels);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (pred && labels[i] == 1) ++tp;
    else if (pred) ++fp;
    else if (labels[i] == 1) ++fn;
  }
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const auto idx = descending(scores);
  std::uint64_t pos = 0, neg = 0;
  for (int l : labels) (l == 1 ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw DegenerateLabels("evalbench", "ROC-AUC needs both classes");
  // Walk groups of equal score from the top; negatives already passed are
  // outscored by every positive in later groups.
  std::uint64_t twice_credit = 0, neg_above = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::uint64_t gp = 0, gn = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? gp : gn) += 1;
      ++j;
    }
    twice_credit += 2 * gp * (neg - neg_above - gn) + gp * gn;
    neg_above += gn;
    i = j;
  }
  return static_cast<double>(twice_credit) / static_cast<double>(2 * pos * neg);
}

double pr_auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  std::uint64_t total_pos = 0;
  for (int l : labels) total_pos += l == 1;
  if (total_pos == 0) throw DegenerateLabels("evalbench", "PRC-AUC needs at least one positive");
  const auto idx = descending(scores);
  std::uint64_t tp = 0, fp = 0, tp_prev = 0;
  double ap = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    ap += (static_cast<double>(tp - tp_prev) / static_cast<double>(total_pos)) *
          (static_cast<double>(tp) / static_cast<double>(tp + fp));
    tp_prev = tp;
    i = j;
  }
  return ap;
}

double compute_metric(Metric m, std::span<const double> scores, std::span<const int> labels, double threshold) {
  switch (m) {
    case Metric::F1: return f1_score(scores, labels, threshold);
    case Metric::RocAuc: return roc_auc(scores, labels);
    case Metric::PrAuc: return pr_auc(scores, labels);
  }
  return 0.0;
}

MetricResult bootstrap_metric(std::span<const double> scores, std::span<const int> labels, Metric metric,
                              const BootstrapOptions& opt) {
  if (opt.n_boot == 0) throw ConfigError("evalbench", "n_boot must be at least 1");
  MetricResult res;
  res.metric = metric_name(metric);
  res.n_boot = opt.n_boot;
  res.seed = opt.seed;
  res.point = compute_metric(metric, scores, labels, opt.threshold);

  auto defined = [&](std::size_t pos, std::size_t n) {
    if (metric == Metric::RocAuc) return pos > 0 && pos < n;
    // F1 is 0/0 on a resample with no positives and no predicted positives;
    // such resamples are redrawn like the AUC ones.
    return pos > 0;
  };
  const std::size_t n = scores.size();
  Rng rng(opt.seed);
  std::vector<double> s(n), values;
  std::vector<int> l(n);
  values.reserve(opt.n_boot);
  for (std::size_t b = 0; b < opt.n_boot; ++b) {
    for (std::size_t attempt = 0;; ++attempt) {
      std::size_t pos = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(rng.below(n));
        s[i] = scores[k];
        l[i] = labels[k];
        pos += l[i] == 1;
      }
      if (defined(pos, n)) break;
      if (attempt + 1 >= opt.max_retries) {
        throw DegenerateLabels("evalbench", res.metric + ": resample undefined after " +
                                                std::to_string(opt.max_retries) + " draws");
      }
      ++res.redraws;
    }
    values.push_back(compute_metric(metric, s, l, opt.threshold));
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  res.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - res.mean) * (v - res.mean);
  res.std = std::sqrt(sq / static_cast<double>(values.size()));
  return res;
}

std::optional<TiePolicy> parse_tie_policy(std::string_view name) {
  const auto n = text::to_lower(name);
  if (n == "listing-order" || n == "listing_order" || n == "listing") return TiePolicy::ListingOrder;
  if (n == "fractional" || n == "average") return TiePolicy::Fractional;
  return std::nullopt;
}

std::string tie_policy_name(TiePolicy p) {
  return p == TiePolicy::ListingOrder ? "listing-order" : "fractional";
}

ScoreTable ScoreTable::read_csv(const std::filesystem::path& path) {
  const auto t = csv::read_file(path);
  const auto cm = t.column("metric"), ct = t.column("task"), cmod = t.column("model"), cv = t.column("value");
  if (!cm || !ct || !cmod || !cv) {
    throw SchemaError("evalbench", path.string() + ": expected columns metric,task,model,value");
  }
  ScoreTable table;
  auto index_of = [](std::vector<std::string>& list, const std::string& name) {
    const auto it = std::find(list.begin(), list.end(), name);
    if (it != list.end()) return static_cast<std::size_t>(it - list.begin());
    list.push_back(name);
    return list.size() - 1;
  };
  struct Cell {
    std::size_t m, t, model;
    std::optional<double> v;
  };
  std::vector<Cell> cells;
  for (const auto& row : t.rows) {
    auto get = [&](std::size_t c) { return c < row.size() ? row[c] : std::string(); };
    Cell c{index_of(table.metrics, get(*cm)), index_of(table.tasks, get(*ct)), index_of(table.models, get(*cmod)),
           std::nullopt};
    const auto text_value = get(*cv);
    if (!text_value.empty() && text_value != "NA") {
      const auto v = text::parse_number(text_value);
      if (!v) throw SchemaError("evalbench", path.string() + ": bad value '" + text_value + "'");
      c.v = *v;
    }
    cells.push_back(c);
  }
  table.values.assign(table.metrics.size(),
                      std::vector<std::vector<std::optional<double>>>(
                          table.tasks.size(), std::vector<std::optional<double>>(table.models.size())));
  for (const auto& c : cells) table.values[c.m][c.t][c.model] = c.v;
  return table;
}

RankTable rank_models(const ScoreTable& table, TiePolicy policy) {
  RankTable out;
  out.models = table.models;
  out.metrics = table.metrics;
  out.policy = policy;
  const std::size_t nm = table.models.size();
  if (nm == 0 || table.tasks.empty() || table.metrics.empty()) {
    throw IncompleteTable("evalbench", "score table is empty");
  }
  out.ranks.resize(table.metrics.size());
  out.average.assign(table.metrics.size(), std::vector<double>(nm, 0.0));
  for (std::size_t m = 0; m < table.metrics.size(); ++m) {
    for (std::size_t t = 0; t < table.tasks.size(); ++t) {
      const auto& row = m < table.values.size() && t < table.values[m].size()
                            ? table.values[m][t]
                            : std::vector<std::optional<double>>{};
      std::vector<double> v(nm);
      for (std::size_t k = 0; k < nm; ++k) {
        if (k >= row.size() || !row[k]) {
          throw IncompleteTable("evalbench", "missing value for metric " + table.metrics[m] + ", task " +
                                                 table.tasks[t] + ", model " + table.models[k]);
        }
        v[k] = *row[k];
      }
      std::vector<std::size_t> order(nm);
      std::iota(order.begin(), order.end(), std::size_t{0});
      // Stable sort keeps listing order among equal values.
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
      std::vector<double> rank(nm);
      for (std::size_t i = 0; i < nm;) {
        std::size_t j = i;
        while (j < nm && v[order[j]] == v[order[i]]) ++j;
        for (std::size_t q = i; q < j; ++q) {
          rank[order[q]] = policy == TiePolicy::ListingOrder ? static_cast<double>(q + 1)
                                                             : (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        }
        i = j;
      }
      for (std::size_t k = 0; k < nm; ++k) out.average[m][k] += rank[k];
      out.ranks[m].push_back(std::move(rank));
    }
    for (auto& a : out.average[m]) a /= static_cast<double>(table.tasks.size());
  }
  out.overall.assign(nm, 0.0);
  for (std::size_t k = 0; k < nm; ++k) {
    for (std::size_t m = 0; m < table.metrics.size(); ++m) out.overall[k] += out.average[m][k];
    out.overall[k] /= static_cast<double>(table.metrics.size());
  }
  return out;
}

nlohmann::json to_json(const RankTable& r) {
  nlohmann::json models = nlohmann::json::array();
  for (std::size_t k = 0; k < r.models.size(); ++k) {
    nlohmann::json avg = nlohmann::json::object();
    for (std::size_t m = 0; m < r.metrics.size(); ++m) avg[r.metrics[m]] = r.average[m][k];
    models.push_back({{"model", r.models[k]}, {"average_rank", avg}, {"overall", r.overall[k]}});
  }
  return {{"tie_policy", tie_policy_name(r.policy)}, {"metrics", r.metrics}, {"models", models},
          {"per_task_ranks", r.ranks}};
}

std::string render_rank_table(const RankTable& r) {
  std::size_t w0 = 5;
  for (const auto& m : r.models) w0 = std::max(w0, m.size());
  std::vector<std::string> head{"Model"};
  head.insert(head.end(), r.metrics.begin(), r.metrics.end());
  head.push_back("Overall Average");
  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < r.models.size(); ++k) {
    std::vector<std::string> row{r.models[k]};
    for (std::size_t m = 0; m < r.metrics.size(); ++m) row.push_back(fixed3(r.average[m][k]));
    row.push_back(fixed3(r.overall[k]));
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> width(head.size());
  for (std::size_t c = 0; c < head.size(); ++c) {
    width[c] = head[c].size();
    for (const auto& row : rows) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      out << (c ? " | " : "") << (c + 1 == cells.size() ? cells[c] : pad(cells[c], width[c]));
    }
    out << '\n';
  };
  line(head);
  std::size_t total = 0;
  for (auto w : width) total += w;
  out << std::string(total + 3 * (width.size() - 1), '-') << '\n';
  for (const auto& row : rows) line(row);
  return out.str();
}

EvalResults evaluate_predictions(const std::vector<PredictionRow>& rows, const BootstrapOptions& options,
                                 const std::string& model_name) {
  EvalResults res;
  res.model_name = model_name;
  res.options = options;
  bool any = false;
  for (std::size_t k = 0; k < kNumAntibiotics; ++k) {
    std::vector<double> s;
    std::vector<int> l;
    for (const auto& r : rows) {
      if (!r.prob[k] || r.label[k] == Susceptibility::Untested) continue;
      s.push_back(*r.prob[k]);
      l.push_back(r.label[k] == Susceptibility::Susceptible ? 1 : 0);
    }
    const auto positives = static_cast<std::size_t>(std::count(l.begin(), l.end(), 1));
    for (const auto metric : kMetrics) {
      EvalResults::Cell cell{std::string(kAntibiotics[k]), metric_name(metric), std::nullopt, "", s.size(), positives};
      if (s.empty()) {
        cell.reason = "no evaluable rows";
      } else {
        try {
          BootstrapOptions o = options;
          // Independent resample streams per (task, metric).
          o.seed = mix_seed(options.seed, k * kMetrics.size() + static_cast<std::size_t>(metric));
          cell.result = bootstrap_metric(s, l, metric, o);
          cell.result->seed = options.seed;
          any = true;
        } catch (const DegenerateLabels& e) {
          cell.reason = e.what();
        }
      }
      res.cells.push_back(std::move(cell));
    }
  }
  if (!any) throw EmptyEval("evalbench", "no label could be evaluated");
  return res;
}

nlohmann::json to_json(const EvalResults& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json j = {{"task", c.task}, {"metric", c.metric}, {"n", c.n}, {"positives", c.positives}};
    if (c.result) {
      j["point"] = c.result->point;
      j["mean"] = c.result->mean;
      j["std"] = c.result->std;
      j["redraws"] = c.result->redraws;
    } else {
      j["point"] = nullptr;
      j["reason"] = c.reason;
    }
    cells.push_back(std::move(j));
  }
  return {{"model", r.model_name},
          {"dispersion", {{"method", "bootstrap"}, {"n_boot", r.options.n_boot}, {"seed", r.options.seed},
                          {"std_ddof", 0}, {"f1_threshold", r.options.threshold}}},
          {"results", cells}};
}

std::string render_results_table(const EvalResults& r) {
  std::size_t wt = 4;
  for (const auto& c : r.cells) wt = std::max(wt, c.task.size());
  std::ostringstream out;
  out << pad("Task", wt) << " | " << pad("Metric", 7) << " | " << pad("Point", 6) << " | Mean +/- Std\n";
  out << std::string(wt + 40, '-') << '\n';
  for (const auto& c : r.cells) {
    out << pad(c.task, wt) << " | " << pad(c.metric, 7) << " | ";
    if (c.result) {
      out << fixed4(c.result->point) << " | " << fixed4(c.result->mean) << " +/- " << fixed4(c.result->std);
    } else {
      out << pad("n/a", 6) << " | " << c.reason;
    }
    out << '\n';
  }
  return out.str();
}

void render_report(const std::optional<EvalResults>& results, const std::optional<RankTable>& ranks,
                   const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  nlohmann::json j = nlohmann::json::object();
  std::string txt;
  if (results) {
    j["evaluation"] = to_json(*results);
    txt += "Model: " + results->model_name + "\n\n" + render_results_table(*results);
  }
  if (ranks) {
    j["ranks"] = to_json(*ranks);
    if (!txt.empty()) txt += "\n";
    txt += "Average ranks (" + tie_policy_name(ranks->policy) + " ties)\n\n" + render_rank_table(*ranks);
  }
  std::ofstream jf(out_dir / "report.json", std::ios::binary);
  std::ofstream tf(out_dir / "report.txt", std::ios::binary);
  if (!jf || !tf) throw IoError("evalbench", "cannot write report files under " + out_dir.string());
  jf << j.dump(2) << '\n';
  tf << txt;
  if (!jf || !tf) throw IoError("evalbench", "write failed under " + out_dir.string());
}

}  // namespace ehrlm
