// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion. Arguments select
// criteria by number; no arguments runs all ten. Exit status 1 if any fails.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "ehrlm/corpus.hpp"
#include "ehrlm/downstream.hpp"
#include "ehrlm/encoder.hpp"
#include "ehrlm/evalbench.hpp"
#include "ehrlm/ingest.hpp"
#include "ehrlm/llm_probe.hpp"
#include "ehrlm/mlm.hpp"
#include "ehrlm/rng.hpp"
#include "ehrlm/synth.hpp"
#include "ehrlm/text.hpp"
#include "ehrlm/tokenizer.hpp"
#include "mock_endpoint.hpp"
#include "support.hpp"

using namespace ehrlm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- 1

Outcome rank_reproduction() {
  const auto t0 = Clock::now();
  const auto table = ScoreTable::read_csv(testing::source_dir() / "data" / "representation_strategy_means.csv");
  const auto r = rank_models(table, TiePolicy::ListingOrder);
  const std::vector<std::string> models = {"Tabular", "EHR-shot", "Word2Vec", "DistilBERT", "SerializedEncoder"};
  const std::vector<std::string> metrics = {"F1", "ROC-AUC", "PRC-AUC"};
  const std::vector<std::vector<double>> expected = {{5.000, 2.875, 2.875, 2.750, 1.500},
                                                     {4.875, 1.875, 3.375, 2.375, 2.500},
                                                     {4.625, 3.000, 3.250, 2.375, 1.750}};
  const std::vector<double> overall = {4.833, 2.583, 3.167, 2.500, 1.917};
  if (r.models != models || r.metrics != metrics || table.tasks.size() != 8) {
    return {false, "fixture layout differs from 8 tasks x 5 models x 3 metrics"};
  }
  double worst = 0.0;
  for (std::size_t m = 0; m < 3; ++m) {
    for (std::size_t k = 0; k < 5; ++k) worst = std::max(worst, std::abs(r.average[m][k] - expected[m][k]));
  }
  for (std::size_t k = 0; k < 5; ++k) worst = std::max(worst, std::abs(r.overall[k] - overall[k]));
  const double secs = seconds_since(t0);
  return {worst <= 0.001 + 1e-12 && secs < 1.0,
          "20 cells, max |diff| " + fmt("%.5f", worst) + ", " + fmt("%.3f", secs) + " s"};
}

// ---------------------------------------------------------------- 2

double roc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
  std::uint64_t twice = 0, p = 0, n = 0;
  for (int l : y) (l ? p : n) += 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!y[j]) twice += s[i] > s[j] ? 2 : (s[i] == s[j] ? 1 : 0);
    }
  }
  return static_cast<double>(twice) / static_cast<double>(2 * p * n);
}

double ap_thresholds(const std::vector<double>& s, const std::vector<int>& y) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  std::uint64_t total_pos = 0;
  for (int l : y) total_pos += l;
  std::uint64_t prev_tp = 0;
  double ap = 0.0;
  for (double t : thresholds) {
    std::uint64_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) (y[i] ? tp : fp) += 1;
    }
    ap += (static_cast<double>(tp - prev_tp) / static_cast<double>(total_pos)) *
          (static_cast<double>(tp) / static_cast<double>(tp + fp));
    prev_tp = tp;
  }
  return ap;
}

void draw_instance(Rng& rng, std::vector<double>& s, std::vector<int>& y, bool need_negative) {
  for (;;) {
    const std::size_t n = 1 + rng.below(50);
    const std::size_t grid = 1 + rng.below(12);
    s.resize(n);
    y.resize(n);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(grid)) / static_cast<double>(grid);
      y[i] = rng.bernoulli(0.4) ? 1 : 0;
      pos += static_cast<std::size_t>(y[i]);
    }
    if (pos > 0 && (!need_negative || pos < n)) return;
  }
}

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  Rng rng(20240901);
  std::vector<double> s;
  std::vector<int> y;
  std::size_t roc_bad = 0, ap_bad = 0, tied = 0;
  for (int i = 0; i < 1000; ++i) {
    draw_instance(rng, s, y, true);
    roc_bad += roc_auc(s, y) != roc_pairs(s, y);
    tied += std::set<double>(s.begin(), s.end()).size() < s.size();
    draw_instance(rng, s, y, false);
    ap_bad += pr_auc(s, y) != ap_thresholds(s, y);
  }
  const double secs = seconds_since(t0);
  return {roc_bad == 0 && ap_bad == 0 && secs < 10.0,
          "ROC mismatches " + std::to_string(roc_bad) + "/1000, AP mismatches " + std::to_string(ap_bad) +
              "/1000, " + std::to_string(tied) + " ROC instances with ties, " + fmt("%.2f", secs) + " s"};
}

// ---------------------------------------------------------------- 3

Outcome gradient_check() {
  const auto t0 = Clock::now();
  ModelConfig c;
  c.vocab_size = 50;
  c.max_len = 16;
  c.layers = 2;
  c.hidden = 16;
  c.heads = 2;
  c.ffn_dim = 64;
  c.seed = 3;
  auto m = init_model<double>(c);
  Rng rng(17);
  // Push weights off the small init so every nonlinearity is exercised.
  for (auto& t : m.params()) {
    for (auto& v : t.data) v += 0.3 * rng.normal();
  }
  std::vector<MaskedExample> examples;
  for (std::size_t r = 0; r < 3; ++r) {
    TokenSequence seq;
    seq.ids.push_back(kClsId);
    for (std::size_t k = 0; k < 6 + 3 * r; ++k) seq.ids.push_back(kNumSpecials + static_cast<TokenId>(rng.below(45)));
    seq.ids.push_back(kSepId);
    MaskPolicy p;
    p.select_prob = 0.4;
    examples.push_back(mask_sequence(seq, p, c.vocab_size, rng));
  }
  auto batch = make_batches(examples, 3, c.max_len).front();
  if (batch.label_count() == 0) batch.labels[1] = batch.input_ids[1];

  auto loss = [&](const Encoder<double>& model) {
    const auto s = masked_nll(model, batch);
    return s.sum / static_cast<double>(s.count);
  };
  const auto g = compute_gradients(m, batch);
  const double h = 1e-4;
  double worst = 0.0;
  std::string worst_at;
  std::size_t checked = 0;
  for (std::size_t slot = 0; slot < m.params().size(); ++slot) {
    auto& t = m.params()[slot];
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      const double saved = t.data[i];
      t.data[i] = saved + h;
      const double up = loss(m);
      t.data[i] = saved - h;
      const double down = loss(m);
      t.data[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = g.grads[slot].data[i];
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      ++checked;
      if (rel > worst) {
        worst = rel;
        worst_at = t.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 120.0,
          std::to_string(checked) + " parameters in " + std::to_string(m.params().size()) +
              " tensors, worst relative error " + fmt("%.2e", worst) + " at " + worst_at + ", " +
              fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------- 4, 6, 9 share desk pipeline runs

struct PipelineRun {
  fs::path dir;
  int status = -1;
  double seconds = 0.0;
  std::string stderr_text;
};

PipelineRun run_pipeline(const fs::path& dir) {
  const auto data = testing::source_dir() / "data" / "desk";
  const std::string cmd = std::string(EHRLM_CLI) + " pipeline --profile desk --seed 0 --set ingest.data_dir=" +
                          data.string() + " --set corpus.sci_docs=" + (data / "sci_docs.jsonl").string() +
                          " -o " + dir.string() + " >" + (dir.string() + ".out") + " 2>" +
                          (dir.string() + ".err");
  const auto t0 = Clock::now();
  const int raw = std::system(cmd.c_str());
  PipelineRun r{dir, WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, seconds_since(t0), testing::read_text(dir.string() + ".err")};
  return r;
}

class DeskRuns {
 public:
  explicit DeskRuns(fs::path root) : root_(std::move(root)) {}
  const PipelineRun& first() {
    if (!a_) a_ = run_pipeline(root_ / "run_a");
    return *a_;
  }
  const PipelineRun& second() {
    if (!b_) b_ = run_pipeline(root_ / "run_b");
    return *b_;
  }

 private:
  fs::path root_;
  std::optional<PipelineRun> a_, b_;
};

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(testing::read_text(p)); }

Outcome mlm_learning(DeskRuns& runs) {
  const auto& run = runs.first();
  if (run.status != 0) return {false, "desk pipeline exited " + std::to_string(run.status) + ": " + run.stderr_text};
  const auto report = read_json(run.dir / "pretrain" / "report.json");
  const auto stats = read_json(run.dir / "corpus" / "stats.json");
  const double initial = report.at("initial_val_loss");
  const double best = report.at("best_val_loss");
  std::size_t bad_ppl = 0, validations = 0;
  std::istringstream log(testing::read_text(run.dir / "pretrain" / "log.jsonl"));
  for (std::string line; std::getline(log, line);) {
    const auto e = nlohmann::json::parse(line);
    if (e.at("event") != "validation") continue;
    ++validations;
    const double loss = e.at("val_loss"), ppl = e.at("perplexity");
    if (std::abs(ppl - std::exp(loss)) > 1e-12 * std::exp(loss)) ++bad_ppl;
  }
  const bool pass = best < 0.5 * initial && bad_ppl == 0 && validations > 0 && run.seconds < 600.0;
  return {pass, std::to_string(stats.at("documents").get<std::size_t>()) + " docs, vocab " +
                    std::to_string(report.at("vocab_size").get<std::size_t>()) + ", held-out loss " +
                    fmt("%.4f", initial) + " -> " + fmt("%.4f", best) + " (ratio " + fmt("%.3f", best / initial) +
                    "), " + std::to_string(validations) + " validations, ppl mismatches " +
                    std::to_string(bad_ppl) + ", whole pipeline " + fmt("%.0f", run.seconds) + " s"};
}

// ---------------------------------------------------------------- 5

Outcome masking_statistics() {
  const MaskPolicy policy;
  const std::size_t vocab = 10000 + kNumSpecials;
  Rng rng(5);
  std::uint64_t maskable = 0, selected = 0, masked = 0, random = 0, kept = 0;
  while (maskable < 1'200'000) {
    TokenSequence seq;
    seq.ids.push_back(kClsId);
    for (int k = 0; k < 126; ++k) seq.ids.push_back(kNumSpecials + static_cast<TokenId>(rng.below(vocab - kNumSpecials)));
    seq.ids.push_back(kSepId);
    const auto ex = mask_sequence(seq, policy, vocab, rng);
    for (std::size_t i = 1; i + 1 < seq.ids.size(); ++i) {
      ++maskable;
      if (ex.labels[i] == kIgnoreLabel) continue;
      ++selected;
      if (ex.input_ids[i] == kMaskId) ++masked;
      else if (ex.input_ids[i] == seq.ids[i]) ++kept;
      else ++random;
    }
  }
  const double sel = static_cast<double>(selected) / static_cast<double>(maskable);
  const double pm = static_cast<double>(masked) / static_cast<double>(selected);
  const double pr = static_cast<double>(random) / static_cast<double>(selected);
  const double pk = static_cast<double>(kept) / static_cast<double>(selected);
  const bool pass = sel >= 0.145 && sel <= 0.155 && std::abs(pm - 0.8) <= 0.01 && std::abs(pr - 0.1) <= 0.01 &&
                    std::abs(pk - 0.1) <= 0.01;
  return {pass, std::to_string(maskable) + " positions, selected " + fmt("%.4f", sel) + ", mask/random/keep " +
                    fmt("%.4f", pm) + "/" + fmt("%.4f", pr) + "/" + fmt("%.4f", pk)};
}

// ---------------------------------------------------------------- 6

Outcome tokenizer_invariants(DeskRuns& runs) {
  Rng rng(6);
  std::size_t identity_bad = 0;
  const std::string alphabet = "abcdefgh";
  auto random_vocab = [&] {
    Vocabulary v;
    const std::size_t n = rng.below(40);
    for (std::size_t i = 0; i < n; ++i) {
      std::string t = rng.bernoulli(0.5) ? "\xe2\x96\x81" : "";
      const std::size_t len = 1 + rng.below(3);
      for (std::size_t k = 0; k < len; ++k) t += alphabet[rng.below(alphabet.size())];
      v.add(t);
    }
    return v;
  };
  for (int i = 0; i < 1000; ++i) {
    const auto base = random_vocab(), domain = random_vocab();
    const auto merged = merge_vocab(base, domain);
    const std::set<std::string> a(base.tokens().begin(), base.tokens().end());
    std::vector<std::string> novel;
    for (const auto& t : domain.tokens()) {
      if (!a.count(t)) novel.push_back(t);
    }
    bool ok = merged.size() == base.size() + novel.size();
    for (std::size_t k = 0; ok && k < base.size(); ++k) ok = merged.tokens()[k] == base.tokens()[k];
    for (std::size_t k = 0; ok && k < novel.size(); ++k) ok = merged.tokens()[base.size() + k] == novel[k];
    identity_bad += ok ? 0 : 1;
  }

  const auto& run = runs.first();
  if (run.status != 0) return {false, "desk pipeline exited " + std::to_string(run.status)};
  const auto corpus = read_corpus(run.dir / "corpus" / "corpus.jsonl");
  const auto tok = run.dir / "tokenizer";
  const auto base = Vocabulary::load(tok / "base.vocab", tok / "base.merges");
  const auto domain = Vocabulary::load(tok / "domain.vocab", tok / "domain.merges");
  const auto merged = Vocabulary::load(run.dir / "vocab" / "merged.vocab", run.dir / "vocab" / "merged.merges");
  const std::size_t unlimited = std::size_t{1} << 24;
  std::size_t unk = 0, tokens = 0, roundtrip_bad = 0;
  CachedEncoder enc_base(base), enc_domain(domain), enc_merged(merged);
  for (const auto& d : corpus.documents) {
    auto& own = d.source == DocSource::Sci ? enc_base : enc_domain;
    for (const auto* seqs : {&own, &enc_merged}) {
      const auto seq = const_cast<CachedEncoder*>(seqs)->encode(d.text, unlimited);
      tokens += seq.ids.size();
      unk += static_cast<std::size_t>(std::count(seq.ids.begin(), seq.ids.end(), kUnkId));
    }
    const auto seq = enc_merged.encode(d.text, unlimited);
    roundtrip_bad += decode(seq.ids, merged) == text::normalize_whitespace(d.text) ? 0 : 1;
  }
  const bool pass = identity_bad == 0 && unk == 0 && roundtrip_bad == 0;
  return {pass, "identity failures " + std::to_string(identity_bad) + "/1000, UNK " + std::to_string(unk) + " of " +
                    std::to_string(tokens) + " tokens, round-trip failures " + std::to_string(roundtrip_bad) + "/" +
                    std::to_string(corpus.documents.size()) + " docs"};
}

// ---------------------------------------------------------------- 7

Outcome leakage_freedom() {
  synth::EhrOptions opt;
  opt.patients = 10000;
  opt.multi_encounter_fraction = 0.3;
  opt.seed = 77;
  const auto data = synth::make_ehr(opt);
  std::size_t multi = 0;
  for (const auto& p : data.patients) multi += p.admissions.size() > 1 ? 1 : 0;

  std::size_t overlaps = 0, unassigned = 0, distinct_assignments = 0;
  std::map<std::string, Split> previous;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto splits = group_split(data, {}, seed);
    // Collect patient ids per split from the encounter level.
    std::array<std::set<std::string>, 3> ids;
    for (const auto& p : data.patients) {
      for (const auto& e : p.admissions) {
        (void)e;
        const auto s = splits.find(p.patient_id);
        if (!s) {
          ++unassigned;
          continue;
        }
        ids[static_cast<std::size_t>(*s)].insert(p.patient_id);
      }
    }
    for (std::size_t a = 0; a < 3; ++a) {
      for (std::size_t b = a + 1; b < 3; ++b) {
        for (const auto& id : ids[a]) overlaps += ids[b].count(id);
      }
    }
    if (splits.by_patient != previous) ++distinct_assignments;
    previous = splits.by_patient;
  }
  const double share = static_cast<double>(multi) / static_cast<double>(data.patients.size());
  const bool pass = overlaps == 0 && unassigned == 0 && data.patients.size() == 10000 && std::abs(share - 0.3) < 0.02;
  return {pass, "10000 patients, " + fmt("%.3f", share) + " multi-encounter, 100 seeds (" +
                    std::to_string(distinct_assignments) + " distinct splits), cross-split overlaps " +
                    std::to_string(overlaps) + ", unassigned " + std::to_string(unassigned)};
}

// ---------------------------------------------------------------- 8

Outcome downstream_sanity() {
  const std::size_t n = 2000, d = 12;
  Rng rng(8);
  FeatureMatrix x;
  x.rows = n;
  x.cols = d;
  x.pooling = "synthetic";
  LabelPanel labels;
  SplitAssignment split;
  for (std::size_t r = 0; r < n; ++r) {
    const std::string id = "R" + std::to_string(r);
    x.row_ids.push_back(id);
    for (std::size_t c = 0; c < d; ++c) x.data.push_back(rng.normal());
    SusceptibilityPanel panel;
    const double* row = x.data.data() + r * d;
    // Each label is a linear rule over two features: separable, but not by
    // a single axis-aligned cut.
    for (std::size_t k = 0; k < kNumAntibiotics; ++k) {
      panel[k] = row[k] + 0.5 * row[(k + 3) % d] > 0.0 ? Susceptibility::Susceptible : Susceptibility::Resistant;
    }
    labels.row_ids.push_back(id);
    labels.rows.push_back(panel);
    split.by_patient[id] = r < 1600 ? Split::Train : Split::Test;
  }
  const auto model = train_gbdt(x, labels, split);
  const auto probs = predict(model, x);
  double worst_auc = 1.0;
  std::size_t increases = 0;
  for (std::size_t k = 0; k < kNumAntibiotics; ++k) {
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t r = 1600; r < n; ++r) {
      s.push_back(*probs[r][k]);
      y.push_back(labels.rows[r][k] == Susceptibility::Susceptible ? 1 : 0);
    }
    worst_auc = std::min(worst_auc, roc_auc(s, y));
    const auto& h = model.labels[k].loss_history;
    for (std::size_t i = 1; i < h.size(); ++i) increases += h[i] > h[i - 1] ? 1 : 0;
  }
  return {worst_auc >= 0.95 && increases == 0,
          "2000 rows (400 held out), min held-out ROC-AUC over 8 labels " + fmt("%.4f", worst_auc) +
              ", loss increases across rounds " + std::to_string(increases)};
}

// ---------------------------------------------------------------- 9

Outcome determinism(DeskRuns& runs) {
  const auto& a = runs.first();
  const auto& b = runs.second();
  if (a.status != 0 || b.status != 0) {
    return {false, "pipeline exit codes " + std::to_string(a.status) + ", " + std::to_string(b.status)};
  }
  const std::vector<std::string> files = {"pretrain/best.ckpt",        "pretrain/last.ckpt",
                                          "pretrain/report.json",      "downstream/predictions.csv",
                                          "downstream/gbdt.json",      "eval/report.json",
                                          "eval/report.txt",           "vocab/merged.vocab",
                                          "corpus/corpus.jsonl",       "probe/samples.jsonl"};
  std::vector<std::string> differing;
  for (const auto& f : files) {
    const auto pa = a.dir / f, pb = b.dir / f;
    if (!fs::exists(pa) || !fs::exists(pb) || testing::read_text(pa) != testing::read_text(pb)) differing.push_back(f);
  }
  std::string detail = std::to_string(files.size() - differing.size()) + "/" + std::to_string(files.size()) +
                       " artifacts byte-identical";
  for (const auto& f : differing) detail += "; differs: " + f;
  return {differing.empty(), detail};
}

// ---------------------------------------------------------------- 10

Outcome probe_harness() {
  std::vector<ProbeSample> samples;
  for (std::size_t i = 0; i < 80; ++i) {
    samples.push_back({"q" + std::to_string(i), "Patient " + std::to_string(i) + " presented with a skin abscess.",
                       std::string(kAntibiotics[i % kNumAntibiotics]), (i * 7 % 3) == 0 ? 0 : 1});
  }
  // Answer key: i % 5 selects right / wrong / abstain / negated / server error.
  auto index_of = [](const nlohmann::json& body) {
    const auto text = body.at("messages")[1].at("content").get<std::string>();
    return static_cast<std::size_t>(std::stoul(text.substr(text.rfind("Patient ") + 8)));
  };
  testing::MockEndpoint mock([&](const nlohmann::json& body, std::size_t, httplib::Response& res) {
    const auto i = index_of(body);
    const int label = samples[i].label;
    switch (i % 5) {
      case 0: res.set_content(testing::completion(label ? "Susceptible." : "Resistant."), "application/json"); break;
      case 1: res.set_content(testing::completion(label ? "resistant" : "susceptible"), "application/json"); break;
      case 2: res.set_content(testing::completion("Unable to say."), "application/json"); break;
      case 3: res.set_content(testing::completion("Not susceptible."), "application/json"); break;
      default: res.status = 503; break;
    }
  });
  std::size_t hand = 0;
  for (std::size_t i = 0; i < 80; ++i) hand += i % 5 == 0 || (i % 5 == 3 && samples[i].label == 0);

  testing::TempDir dir;
  ProbeConfig cfg;
  cfg.endpoint = mock.url();
  cfg.api_key_env.clear();
  cfg.max_retries = 1;
  cfg.backoff_s = 0.001;
  cfg.timeout_s = 5.0;
  const auto live = run_probe(samples, cfg, dir / "transcript.jsonl");
  const auto hits_live = mock.hits();
  mock.stop();
  cfg.endpoint = (dir / "transcript.jsonl").string();
  const auto replay = run_probe(samples, cfg, dir / "replayed.jsonl");
  const auto replay_hits = mock.hits() - hits_live;
  const double expected = static_cast<double>(hand) / 80.0;
  const bool pass = live.accuracy == expected && replay.accuracy == expected && replay_hits == 0 &&
                    testing::read_text(dir / "transcript.jsonl") == testing::read_text(dir / "replayed.jsonl");
  return {pass, "hand count " + std::to_string(hand) + "/80, live " + fmt("%.4f", live.accuracy) + ", replay " +
                    fmt("%.4f", replay.accuracy) + ", replay requests " + std::to_string(replay_hits)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  testing::TempDir scratch;
  DeskRuns runs(scratch.path());

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"rank reproduction", rank_reproduction},
      {"metric oracles", metric_oracles},
      {"gradient correctness", gradient_check},
      {"MLM learning", [&] { return mlm_learning(runs); }},
      {"masking statistics", masking_statistics},
      {"tokenizer invariants", [&] { return tokenizer_invariants(runs); }},
      {"leakage freedom", leakage_freedom},
      {"downstream sanity", downstream_sanity},
      {"determinism", [&] { return determinism(runs); }},
      {"probe harness", probe_harness},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i + 1);
    if (!wanted.empty() && !wanted.count(number)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << number << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
