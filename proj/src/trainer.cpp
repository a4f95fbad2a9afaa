// SPDX-License-Identifier: Apache-2.0
#include "ehrlm/trainer.hpp"

#include <fstream>
#include <numeric>

#include "ehrlm/checkpoint.hpp"
#include "ehrlm/rng.hpp"

namespace ehrlm {
namespace {

// Sub-stream ids for mix_seed.
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kMaskStream = 2;
constexpr std::uint64_t kDropoutStream = 3;

nlohmann::json step_event(const StepRecord& r) {
  return {{"event", "step"}, {"step", r.step},           {"train_loss", r.train_loss},
          {"lr", r.lr},      {"grad_norm", r.grad_norm}, {"clipped_norm", r.clipped_norm}};
}

nlohmann::json validation_event(const ValidationRecord& r) {
  return {{"event", "validation"}, {"step", r.step}, {"val_loss", r.val_loss},
          {"perplexity", r.perplexity}};
}

}  // namespace

void TrainConfig::validate() const {
  auto positive = [](double x) { return x > 0.0 && std::isfinite(x); };
  if (!positive(lr0)) throw ConfigError("trainer", "lr0 must be positive");
  if (batch_size == 0) throw ConfigError("trainer", "batch_size must be positive");
  if (max_len < 2) throw ConfigError("trainer", "max_len must be at least 2");
  if (max_epochs == 0) throw ConfigError("trainer", "max_epochs must be positive");
  if (!positive(clip_norm)) throw ConfigError("trainer", "clip_norm must be positive");
  if (val_every == 0) throw ConfigError("trainer", "val_every must be positive");
  if (patience < 1) throw ConfigError("trainer", "patience must be at least 1");
  if (!(adamw.beta1 >= 0.0 && adamw.beta1 < 1.0) || !(adamw.beta2 >= 0.0 && adamw.beta2 < 1.0)) {
    throw ConfigError("trainer", "betas must lie in [0, 1)");
  }
  if (!positive(adamw.eps)) throw ConfigError("trainer", "eps must be positive");
  if (!(adamw.weight_decay >= 0.0)) throw ConfigError("trainer", "weight_decay must be nonnegative");
  mask.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr0", c.lr0},
          {"batch_size", c.batch_size},
          {"max_len", c.max_len},
          {"max_epochs", c.max_epochs},
          {"clip_norm", c.clip_norm},
          {"val_every", c.val_every},
          {"patience", c.patience},
          {"beta1", c.adamw.beta1},
          {"beta2", c.adamw.beta2},
          {"eps", c.adamw.eps},
          {"weight_decay", c.adamw.weight_decay},
          {"mask_select_prob", c.mask.select_prob},
          {"mask_frac", c.mask.mask_frac},
          {"random_frac", c.mask.random_frac},
          {"keep_frac", c.mask.keep_frac},
          {"seed", c.seed},
          {"eval_seed", c.eval_seed}};
}

double lr_at(std::size_t step, std::size_t total_steps, double lr0) {
  if (total_steps == 0) throw ConfigError("trainer", "total_steps must be positive");
  if (step > total_steps) throw ConfigError("trainer", "step beyond total_steps");
  if (step == total_steps) return 0.0;
  return lr0 * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

std::string stop_reason_name(StopReason r) {
  return r == StopReason::EarlyStop ? "early_stop" : "max_epochs";
}

nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json validations = nlohmann::json::array();
  for (const auto& v : r.validations) validations.push_back(validation_event(v));
  return {{"initial_val_loss", r.initial_val_loss},
          {"best_step", r.best_step},
          {"best_val_loss", r.best_val_loss},
          {"total_steps", r.total_steps},
          {"steps_run", r.steps.empty() ? 0 : r.steps.back().step},
          {"epochs_run", r.epochs_run},
          {"stop_reason", stop_reason_name(r.stop_reason)},
          {"validations", validations}};
}

std::vector<MaskedBatch> evaluation_batches(const std::vector<TokenSequence>& docs,
                                            std::size_t vocab_size, const MaskPolicy& policy,
                                            std::uint64_t eval_seed, std::size_t batch_size,
                                            std::size_t max_len) {
  Rng rng(eval_seed);
  std::vector<MaskedExample> examples;
  examples.reserve(docs.size());
  for (const auto& d : docs) examples.push_back(mask_sequence(d, policy, vocab_size, rng));
  return make_batches(examples, batch_size, max_len);
}

double evaluate_perplexity(const Encoder<float>& model, const std::vector<TokenSequence>& docs,
                           const MaskPolicy& policy, std::uint64_t eval_seed,
                           std::size_t batch_size) {
  if (docs.empty()) throw EmptyCorpus("trainer", "no documents to evaluate");
  const auto batches = evaluation_batches(docs, model.config().vocab_size, policy, eval_seed,
                                          batch_size, model.config().max_len);
  return std::exp(evaluation_loss(model, batches));
}

PretrainResult pretrain(Encoder<float> model, const std::vector<TokenSequence>& train,
                        const std::vector<TokenSequence>& heldout, const TrainConfig& config,
                        const std::optional<std::filesystem::path>& run_dir,
                        const TrainObserver& observer) {
  config.validate();
  if (train.empty()) throw EmptyCorpus("trainer", "no training documents");
  if (heldout.empty()) throw EmptyCorpus("trainer", "no heldout documents");
  const std::size_t vocab = model.config().vocab_size;
  const std::size_t max_len = std::min(config.max_len, model.config().max_len);
  const auto eval = evaluation_batches(heldout, vocab, config.mask, config.eval_seed,
                                       config.batch_size, max_len);

  std::ofstream log;
  if (run_dir) {
    std::filesystem::create_directories(*run_dir);
    std::ofstream cfg(*run_dir / "config.json", std::ios::binary);
    if (!cfg) throw IoError("trainer", "cannot write " + (*run_dir / "config.json").string());
    cfg << nlohmann::json{{"model", to_json(model.config())}, {"train", to_json(config)}}.dump(2)
        << '\n';
    log.open(*run_dir / "log.jsonl", std::ios::binary);
    if (!log) throw IoError("trainer", "cannot write " + (*run_dir / "log.jsonl").string());
  }

  TrainReport report;
  const std::size_t steps_per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
  report.total_steps = config.max_epochs * steps_per_epoch;
  report.initial_val_loss = evaluation_loss(model, eval);
  report.best_val_loss = report.initial_val_loss;

  auto state = AdamState<float>::zeros_like(model.params());
  EarlyStopper stopper(config.patience);
  Encoder<float> best = model;
  Rng dropout_rng(mix_seed(config.seed, kDropoutStream));
  const bool use_dropout = model.config().dropout > 0.0;

  std::size_t step = 0;
  bool early = false;
  auto validate = [&]() {
    const double loss = evaluation_loss(model, eval);
    ValidationRecord rec{step, loss, std::exp(loss)};
    report.validations.push_back(rec);
    if (log.is_open()) log << validation_event(rec).dump() << '\n';
    const bool stop = stopper.observe(loss);
    if (stopper.improved_last()) {
      best = model;
      report.best_step = step;
      report.best_val_loss = loss;
    }
    if (observer) observer(report);
    return stop;
  };

  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 0; epoch < config.max_epochs && !early; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mix_seed(mix_seed(config.seed, kShuffleStream), epoch));
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    Rng mask_rng(mix_seed(mix_seed(config.seed, kMaskStream), epoch));
    std::vector<MaskedExample> examples;
    examples.reserve(train.size());
    for (const auto i : order) examples.push_back(mask_sequence(train[i], config.mask, vocab, mask_rng));
    const auto batches = make_batches(examples, config.batch_size, max_len);

    for (const auto& batch : batches) {
      const double lr = lr_at(step, report.total_steps, config.lr0);
      ++step;
      if (batch.label_count() > 0) {
        auto lg = compute_gradients(model, batch, use_dropout ? &dropout_rng : nullptr);
        StepRecord rec;
        rec.step = step;
        rec.train_loss = lg.loss;
        rec.lr = lr;
        rec.grad_norm = clip_gradients(lg.grads, config.clip_norm);
        rec.clipped_norm = global_norm(lg.grads);
        adamw_step(model.params(), lg.grads, state, step, lr, config.adamw,
                   &Encoder<float>::is_decay_exempt);
        report.steps.push_back(rec);
        if (log.is_open()) log << step_event(rec).dump() << '\n';
        if (observer) observer(report);
      }
      if (step % config.val_every == 0 && validate()) {
        early = true;
        break;
      }
    }
    report.epochs_run = epoch + 1;
  }
  if (!early && (report.validations.empty() || report.validations.back().step != step)) validate();
  report.stop_reason = early ? StopReason::EarlyStop : StopReason::MaxEpochs;

  if (log.is_open()) {
    log << nlohmann::json{{"event", "stop"},
                          {"step", step},
                          {"reason", stop_reason_name(report.stop_reason)},
                          {"best_step", report.best_step},
                          {"best_val_loss", report.best_val_loss}}
               .dump()
        << '\n';
  }
  if (run_dir) {
    save_checkpoint(best, *run_dir / "best.ckpt");
    save_checkpoint(model, *run_dir / "last.ckpt");
  }
  return {std::move(best), std::move(model), std::move(report)};
}

PretrainResult pretrain(Encoder<float> model, const CorpusStore& corpus, const Vocabulary& vocab,
                        const TrainConfig& config,
                        const std::optional<std::filesystem::path>& run_dir,
                        const TrainObserver& observer) {
  const std::size_t max_len = std::min(config.max_len, model.config().max_len);
  CachedEncoder encoder(vocab);
  std::vector<TokenSequence> train, heldout;
  for (const auto* d : corpus.select(CorpusSplit::Train)) train.push_back(encoder.encode(d->text, max_len));
  for (const auto* d : corpus.select(CorpusSplit::Heldout)) heldout.push_back(encoder.encode(d->text, max_len));
  return pretrain(std::move(model), train, heldout, config, run_dir, observer);
}

}  // namespace ehrlm
