// SPDX-License-Identifier: Apache-2.0
//
// MLM pretraining: AdamW, linear decay without warmup, global-norm clipping,
// periodic validation with early stopping, and a JSON-lines run log.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ehrlm/corpus.hpp"
#include "ehrlm/encoder.hpp"
#include "ehrlm/mlm.hpp"
#include "ehrlm/tensor.hpp"
#include "ehrlm/tokenizer.hpp"

namespace ehrlm {

struct AdamWParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct TrainConfig {
  double lr0 = 2e-5;
  std::size_t batch_size = 64;
  std::size_t max_len = 512;
  std::size_t max_epochs = 100;
  double clip_norm = 1.0;
  std::size_t val_every = 10000;
  std::size_t patience = 5;
  AdamWParams adamw;
  MaskPolicy mask;
  std::uint64_t seed = 0;
  /// Seeds the one-off masking of the heldout split.
  std::uint64_t eval_seed = 1234;

  /// Throws ConfigError.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);

/// lr0 * (1 - step / total_steps). Throws ConfigError when total_steps is 0
/// or step exceeds it.
double lr_at(std::size_t step, std::size_t total_steps, double lr0);

/// Scales every tensor by clip_norm / g when the global norm g exceeds
/// clip_norm. Returns g.
template <typename T>
double clip_gradients(ParamSet<T>& grads, double clip_norm) {
  const double g = global_norm(grads);
  if (g > clip_norm) {
    const double scale = clip_norm / g;
    for (auto& t : grads) {
      for (auto& v : t.data) v = static_cast<T>(static_cast<double>(v) * scale);
    }
  }
  return g;
}

template <typename T>
struct AdamState {
  ParamSet<T> m;
  ParamSet<T> v;

  static AdamState zeros_like(const ParamSet<T>& params) {
    return {params.zeros_like(), params.zeros_like()};
  }
};

/// One AdamW update at 1-based `step`: decoupled decay p -= lr*wd*p, then the
/// bias-corrected Adam step. Tensors for which `decay_exempt(name)` is true
/// receive no decay.
template <typename T>
void adamw_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state,
                std::size_t step, double lr, const AdamWParams& hp,
                const std::function<bool(const std::string&)>& decay_exempt = {}) {
  if (step == 0) throw ConfigError("trainer", "AdamW step counter starts at 1");
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].data;
    const auto& g = grads[i].data;
    auto& m = state.m[i].data;
    auto& v = state.v[i].data;
    const bool decay = hp.weight_decay != 0.0 && !(decay_exempt && decay_exempt(params[i].name));
    for (std::size_t j = 0; j < p.size(); ++j) {
      double pj = static_cast<double>(p[j]);
      const double gj = static_cast<double>(g[j]);
      if (decay) pj -= lr * hp.weight_decay * pj;
      const double mj = hp.beta1 * static_cast<double>(m[j]) + (1.0 - hp.beta1) * gj;
      const double vj = hp.beta2 * static_cast<double>(v[j]) + (1.0 - hp.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      pj -= lr * (mj / c1) / (std::sqrt(vj / c2) + hp.eps);
      p[j] = static_cast<T>(pj);
    }
  }
}

/// Patience counter over successive validation losses. Only a strictly lower
/// loss counts as an improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  /// Records a loss; returns true when training should stop.
  bool observe(double loss) {
    ++checks_;
    if (!best_ || loss < *best_) {
      best_ = loss;
      best_check_ = checks_ - 1;
      stale_ = 0;
      return false;
    }
    return ++stale_ >= patience_;
  }

  bool improved_last() const { return stale_ == 0 && best_.has_value(); }
  std::optional<double> best() const { return best_; }
  /// 0-based index of the best check.
  std::size_t best_check() const { return best_check_; }

 private:
  std::size_t patience_;
  std::size_t checks_ = 0;
  std::size_t stale_ = 0;
  std::size_t best_check_ = 0;
  std::optional<double> best_;
};

enum class StopReason { EarlyStop, MaxEpochs };
std::string stop_reason_name(StopReason r);

struct StepRecord {
  std::size_t step = 0;
  double train_loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;     // before clipping
  double clipped_norm = 0.0;  // after clipping
};

struct ValidationRecord {
  std::size_t step = 0;
  double val_loss = 0.0;
  double perplexity = 0.0;
};

struct TrainReport {
  std::vector<StepRecord> steps;
  std::vector<ValidationRecord> validations;
  double initial_val_loss = 0.0;
  std::size_t best_step = 0;
  double best_val_loss = 0.0;
  std::size_t total_steps = 0;
  std::size_t epochs_run = 0;
  StopReason stop_reason = StopReason::MaxEpochs;
};

nlohmann::json to_json(const TrainReport& report);

struct PretrainResult {
  Encoder<float> best;
  Encoder<float> last;
  TrainReport report;
};

/// Called after every optimizer step and validation; for progress output.
using TrainObserver = std::function<void(const TrainReport&)>;

/// Trains on `train` sequences, validating on `heldout`. Masks are re-drawn
/// every epoch from the seed; the heldout split is masked once with
/// eval_seed. When `run_dir` is set, writes config.json, log.jsonl,
/// best.ckpt and last.ckpt there. Throws EmptyCorpus or EmptyMask.
PretrainResult pretrain(Encoder<float> model, const std::vector<TokenSequence>& train,
                        const std::vector<TokenSequence>& heldout, const TrainConfig& config,
                        const std::optional<std::filesystem::path>& run_dir = std::nullopt,
                        const TrainObserver& observer = {});

/// Encodes the corpus splits with `vocab` and trains.
PretrainResult pretrain(Encoder<float> model, const CorpusStore& corpus, const Vocabulary& vocab,
                        const TrainConfig& config,
                        const std::optional<std::filesystem::path>& run_dir = std::nullopt,
                        const TrainObserver& observer = {});

/// Masks `docs` once with Rng(eval_seed) and batches them.
std::vector<MaskedBatch> evaluation_batches(const std::vector<TokenSequence>& docs,
                                            std::size_t vocab_size, const MaskPolicy& policy,
                                            std::uint64_t eval_seed, std::size_t batch_size,
                                            std::size_t max_len);

/// Mean masked-token NLL over fixed evaluation batches. Throws EmptyMask.
template <typename T>
double evaluation_loss(const Encoder<T>& model, const std::vector<MaskedBatch>& batches) {
  NllSum total;
  for (const auto& b : batches) {
    const auto s = masked_nll(model, b);
    total.sum += s.sum;
    total.count += s.count;
  }
  if (total.count == 0) throw EmptyMask("trainer", "evaluation set has no masked positions");
  return total.sum / static_cast<double>(total.count);
}

/// exp(mean masked-token NLL) under a fixed evaluation mask. Throws
/// EmptyCorpus when `docs` is empty.
double evaluate_perplexity(const Encoder<float>& model, const std::vector<TokenSequence>& docs,
                           const MaskPolicy& policy = {}, std::uint64_t eval_seed = 1234,
                           std::size_t batch_size = 64);

}  // namespace ehrlm
