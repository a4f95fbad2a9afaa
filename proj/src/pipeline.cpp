// SPDX-License-Identifier: Apache-2.0
#include "ehrlm/pipeline.hpp"

#include <fstream>
#include <ostream>
#include <set>

#include "ehrlm/checkpoint.hpp"
#include "ehrlm/corpus.hpp"
#include "ehrlm/downstream.hpp"
#include "ehrlm/evalbench.hpp"
#include "ehrlm/ingest.hpp"
#include "ehrlm/llm_probe.hpp"
#include "ehrlm/rng.hpp"
#include "ehrlm/serializer.hpp"
#include "ehrlm/text.hpp"
#include "ehrlm/tokenizer.hpp"
#include "ehrlm/trainer.hpp"

namespace ehrlm {
namespace {

namespace fs = std::filesystem;

void write_json(const nlohmann::json& j, const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("pipeline", "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("pipeline", "failed writing " + path.string());
}

void require(const fs::path& path, const std::string& stage) {
  if (!fs::exists(path)) {
    throw InputError("pipeline", path.string() + " not found; run `" + stage + "` first");
  }
}

Vocabulary load_vocab(const fs::path& dir, const std::string& stem) {
  return Vocabulary::load(dir / (stem + ".vocab"), dir / (stem + ".merges"));
}

std::vector<std::string> texts_of(const CorpusStore& corpus, DocSource source) {
  std::vector<std::string> out;
  for (const auto& d : corpus.documents) {
    if (d.source == source) out.push_back(d.text);
  }
  return out;
}

}  // namespace

std::uint64_t stage_seed(const PipelineConfig& cfg, SeedStream stream) {
  return mix_seed(cfg.seed, static_cast<std::uint64_t>(stream));
}

Pipeline::Pipeline(PipelineConfig cfg, fs::path root, std::ostream& progress)
    : cfg_(std::move(cfg)), root_(std::move(root)), out_(progress) {
  cfg_.validate();
  write_json(to_json(cfg_), root_ / "config.json");
}

void Pipeline::ingest() {
  const auto data = load_tables(cfg_.ingest.data_dir);
  auto [cohort, report] = build_cohort(data, cfg_.ingest.criteria);
  if (report.empty) throw InputError("ingest", "no encounter satisfies the cohort criteria");
  const auto splits = group_split(cohort, cfg_.ingest.ratios, stage_seed(cfg_, SeedStream::Split));

  const auto d = dir("ingest");
  write_tables(cohort, d / "cohort");
  write_splits(splits, d / "splits.csv");

  std::map<std::string, std::size_t> per_split;
  for (const auto& [id, s] : splits.by_patient) ++per_split[std::string(split_name(s))];
  const auto& w = data.warnings;
  write_json({{"tables", data.table_manifest},
              {"dropped_rows",
               {{"unknown_patient", w.unknown_patient},
                {"unknown_admission", w.unknown_admission},
                {"bad_timestamp", w.bad_timestamp},
                {"bad_value", w.bad_value},
                {"duplicate_admission", w.duplicate_admission}}},
              {"patients_in", report.patients_in},
              {"encounters_in", report.encounters_in},
              {"patients_out", report.patients_out},
              {"encounters_out", report.encounters_out},
              {"tested_labels_out", report.tested_labels_out},
              {"split_patients", per_split},
              {"split_seed", splits.seed}},
             d / "report.json");
  out_ << "ingest: " << report.patients_out << " patients, " << report.encounters_out << " encounters ("
       << per_split["train"] << "/" << per_split["validation"] << "/" << per_split["test"] << " split), "
       << w.total() << " rows dropped\n";
}

void Pipeline::serialize() {
  const auto cohort_dir = dir("ingest") / "cohort";
  require(cohort_dir, "ingest");
  const auto cohort = load_tables(cohort_dir);
  const auto templates =
      cfg_.serialize.template_file.empty() ? TemplateSet::canonical() : TemplateSet::load(cfg_.serialize.template_file);
  templates.validate();
  const auto docs = serialize_cohort(cohort, templates);
  const auto d = dir("serialize");
  fs::create_directories(d);
  write_jsonl(docs, d / "documents.jsonl");
  write_json(templates.to_json(), d / "template.json");
  std::size_t words = 0;
  for (const auto& doc : docs) words += text::split_whitespace(doc.text).size();
  out_ << "serialize: " << docs.size() << " documents, " << words / std::max<std::size_t>(docs.size(), 1)
       << " words on average\n";
}

void Pipeline::corpus_stats() {
  const auto ehr_path = dir("serialize") / "documents.jsonl";
  require(ehr_path, "serialize");
  if (cfg_.corpus.sci_docs.empty()) throw ConfigError("corpus", "corpus.sci_docs must be set");
  const auto sci = read_jsonl(cfg_.corpus.sci_docs);
  const auto ehr = read_jsonl(ehr_path);
  const auto corpus = mix_corpus(sci, ehr, cfg_.corpus.heldout_fraction, stage_seed(cfg_, SeedStream::Corpus));

  const auto d = dir("corpus");
  fs::create_directories(d);
  write_corpus(corpus, d / "corpus.jsonl");
  const auto train = corpus.select(CorpusSplit::Train).size();
  const auto heldout = corpus.select(CorpusSplit::Heldout).size();
  const auto overlap = corpus_overlap(sci, ehr);
  write_json({{"documents", corpus.documents.size()},
              {"sci_documents", sci.size()},
              {"ehr_documents", ehr.size()},
              {"train", train},
              {"heldout", heldout},
              {"mix_ratio", corpus.mix_ratio},
              {"sci_ehr_overlap", to_json(overlap)}},
             d / "stats.json");
  out_ << "corpus-stats: " << corpus.documents.size() << " documents (" << train << " train, " << heldout
       << " heldout), jaccard " << overlap.jaccard << ", eta " << overlap.eta << "\n";
}

void Pipeline::train_tokenizer() {
  const auto corpus_path = dir("corpus") / "corpus.jsonl";
  require(corpus_path, "corpus-stats");
  const auto corpus = read_corpus(corpus_path);
  const auto sci = texts_of(corpus, DocSource::Sci);
  const auto ehr = texts_of(corpus, DocSource::Ehr);
  const auto base = train_bpe(sci, cfg_.tokenizer.base_vocab_size);
  const auto domain = train_bpe(ehr, cfg_.tokenizer.domain_vocab_size);

  const auto d = dir("tokenizer");
  fs::create_directories(d);
  base.save(d / "base.vocab", d / "base.merges");
  domain.save(d / "domain.vocab", d / "domain.merges");
  write_json({{"base_size", base.size()},
              {"base_merges", base.merges().size()},
              {"domain_size", domain.size()},
              {"domain_merges", domain.merges().size()}},
             d / "report.json");
  out_ << "train-tokenizer: base " << base.size() << " tokens, domain " << domain.size() << " tokens\n";
}

void Pipeline::merge_vocab() {
  const auto tok = dir("tokenizer");
  require(tok / "domain.vocab", "train-tokenizer");
  const auto base = load_vocab(tok, "base");
  const auto domain = load_vocab(tok, "domain");
  const auto merged = ehrlm::merge_vocab(base, domain);

  const auto d = dir("vocab");
  fs::create_directories(d);
  merged.save(d / "merged.vocab", d / "merged.merges");
  const std::set<std::string> a(base.tokens().begin(), base.tokens().end());
  const std::set<std::string> b(domain.tokens().begin(), domain.tokens().end());
  std::size_t novel = 0;
  for (const auto& t : b) novel += a.count(t) == 0 ? 1 : 0;
  const auto overlap = overlap_of(a, b);
  write_json({{"base_size", base.size()},
              {"domain_size", domain.size()},
              {"novel_domain_tokens", novel},
              {"merged_size", merged.size()},
              {"eta", overlap.eta},
              {"jaccard", overlap.jaccard}},
             d / "report.json");
  out_ << "merge-vocab: " << base.size() << " + " << novel << " novel = " << merged.size() << " tokens, eta "
       << overlap.eta << "\n";
}

void Pipeline::pretrain() {
  const auto corpus_path = dir("corpus") / "corpus.jsonl";
  require(corpus_path, "corpus-stats");
  require(dir("vocab") / "merged.vocab", "merge-vocab");
  const auto corpus = read_corpus(corpus_path);
  const auto vocab = load_vocab(dir("vocab"), "merged");

  ModelConfig mc = cfg_.model;
  mc.vocab_size = vocab.size();
  mc.seed = stage_seed(cfg_, SeedStream::Model);
  TrainConfig tc = cfg_.train;
  tc.seed = stage_seed(cfg_, SeedStream::Train);

  std::size_t seen = 0;
  const auto observer = [&](const TrainReport& r) {
    if (r.validations.size() == seen) return;
    seen = r.validations.size();
    const auto& v = r.validations.back();
    out_ << "pretrain: step " << v.step << "/" << r.total_steps << " val_loss " << v.val_loss << " ppl "
         << v.perplexity << "\n"
         << std::flush;
  };
  const auto d = dir("pretrain");
  out_ << "pretrain: " << parameter_count(mc) << " parameters, vocab " << mc.vocab_size << "\n" << std::flush;
  const auto result = ehrlm::pretrain(init_model<float>(mc), corpus, vocab, tc, d, observer);
  auto report = to_json(result.report);
  report["vocab_size"] = mc.vocab_size;
  report["parameters"] = parameter_count(mc);
  write_json(report, d / "report.json");
  out_ << "pretrain: " << stop_reason_name(result.report.stop_reason) << ", initial val_loss "
       << result.report.initial_val_loss << ", best " << result.report.best_val_loss << " at step "
       << result.report.best_step << "\n";
}

void Pipeline::embed() {
  const auto ckpt = dir("pretrain") / "best.ckpt";
  require(ckpt, "pretrain");
  require(dir("serialize") / "documents.jsonl", "serialize");
  const auto model = load_checkpoint(ckpt);
  const auto vocab = load_vocab(dir("vocab"), "merged");
  const auto docs = read_jsonl(dir("serialize") / "documents.jsonl");
  const auto features = embed_documents(model, docs, vocab, cfg_.downstream.pooling, cfg_.downstream.max_windows);
  const auto d = dir("embed");
  fs::create_directories(d);
  write_features(features, d / "features.csv");
  out_ << "embed: " << features.rows << " x " << features.cols << " (" << features.pooling << ")\n";
}

void Pipeline::train_downstream() {
  const auto feat_path = dir("embed") / "features.csv";
  require(feat_path, "embed");
  const auto features = read_features(feat_path);
  const auto labels = label_panel(load_tables(dir("ingest") / "cohort"));
  const auto splits = read_splits(dir("ingest") / "splits.csv");
  const auto model = train_gbdt(features, labels, splits, cfg_.downstream.gbdt);
  const auto probs = predict(model, features);

  std::vector<PredictionRow> rows;
  for (std::size_t r = 0; r < features.rows; ++r) {
    const auto& id = features.row_ids[r];
    if (splits.find(id) != Split::Test) continue;
    PredictionRow row{id, probs[r], untested_panel()};
    if (const auto li = labels.find(id)) row.label = labels.rows[*li];
    rows.push_back(row);
  }

  const auto d = dir("downstream");
  fs::create_directories(d);
  save_gbdt(model, d / "gbdt.json");
  write_predictions(rows, d / "predictions.csv");
  nlohmann::json per_label = nlohmann::json::object();
  for (std::size_t k = 0; k < kNumAntibiotics; ++k) {
    const auto& m = model.labels[k];
    per_label[std::string(kAntibiotics[k])] = {
        {"trained", m.trained},
        {"positives", m.positives},
        {"negatives", m.negatives},
        {"trees", m.trees.size()},
        {"final_train_loss", m.loss_history.empty() ? nlohmann::json() : nlohmann::json(m.loss_history.back())}};
  }
  write_json({{"labels", per_label}, {"test_rows", rows.size()}, {"warnings", model.warnings}}, d / "report.json");
  for (const auto& w : model.warnings) out_ << "train-downstream: warning: " << w << "\n";
  out_ << "train-downstream: " << rows.size() << " test rows predicted\n";
}

void Pipeline::evaluate(const std::optional<fs::path>& predictions) {
  const auto path = predictions.value_or(dir("downstream") / "predictions.csv");
  require(path, "train-downstream");
  BootstrapOptions opt;
  opt.n_boot = cfg_.eval.n_boot;
  opt.seed = stage_seed(cfg_, SeedStream::Bootstrap);
  opt.threshold = cfg_.eval.f1_threshold;
  const auto results = evaluate_predictions(read_predictions(path), opt, cfg_.eval.model_name);
  render_report(results, std::nullopt, dir("eval"));
  out_ << render_results_table(results);
}

void Pipeline::rank(const std::optional<fs::path>& scores) {
  const auto path = scores.value_or(cfg_.eval.scores);
  if (path.empty()) throw ConfigError("evalbench", "no score table given (set eval.scores)");
  const auto ranks = rank_models(ScoreTable::read_csv(path), cfg_.eval.tie_policy);
  render_report(std::nullopt, ranks, dir("rank"));
  out_ << render_rank_table(ranks);
}

void Pipeline::probe() {
  require(dir("serialize") / "documents.jsonl", "serialize");
  const auto docs = read_jsonl(dir("serialize") / "documents.jsonl");
  const auto labels = label_panel(load_tables(dir("ingest") / "cohort"));
  const auto splits = read_splits(dir("ingest") / "splits.csv");
  std::vector<SerializedDocument> test_docs;
  for (const auto& doc : docs) {
    if (doc.patient_id && splits.find(*doc.patient_id) == Split::Test) test_docs.push_back(doc);
  }
  ProbeConfig pc = cfg_.probe;
  pc.seed = stage_seed(cfg_, SeedStream::Probe);
  const auto samples = make_probe_samples(test_docs, labels, pc.samples, pc.seed);

  const auto d = dir("probe");
  fs::create_directories(d);
  write_probe_samples(samples, d / "samples.jsonl");
  if (pc.endpoint.empty()) {
    out_ << "probe: " << samples.size() << " samples written; no endpoint configured\n";
    return;
  }
  const bool live = pc.endpoint.rfind("http://", 0) == 0 || pc.endpoint.rfind("https://", 0) == 0;
  // A replayed transcript must not be overwritten while it is read.
  const auto transcript = d / (live ? "transcript.jsonl" : "replay.jsonl");
  const auto report = run_probe(samples, pc, transcript);
  write_json(to_json(report), d / "report.json");
  out_ << "probe: accuracy " << report.accuracy << " (" << report.correct << "/" << report.total << ", "
       << report.abstained << " abstained, " << report.failed << " failed)\n";
}

void Pipeline::run_all() {
  ingest();
  serialize();
  corpus_stats();
  train_tokenizer();
  merge_vocab();
  pretrain();
  embed();
  train_downstream();
  evaluate();
  if (!cfg_.eval.scores.empty()) rank();
  probe();
}

}  // namespace ehrlm
