// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <cmath>
#include <fstream>

#include "ehrlm/checkpoint.hpp"
#include "ehrlm/error.hpp"
#include "ehrlm/trainer.hpp"
#include "support.hpp"

using namespace ehrlm;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ParamSet<double> scalar_set(const std::string& name, double value) {
  ParamSet<double> p;
  p.add(name, {1});
  p[0].data[0] = value;
  return p;
}

ModelConfig small_model(std::size_t vocab) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.max_len = 24;
  c.layers = 1;
  c.hidden = 16;
  c.heads = 2;
  c.ffn_dim = 32;
  c.seed = 5;
  return c;
}

// Sequences whose tokens follow a fixed successor rule, so context predicts
// masked tokens well.
std::vector<TokenSequence> patterned(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  const auto regular = static_cast<TokenId>(vocab - kNumSpecials);
  std::vector<TokenSequence> out;
  for (std::size_t i = 0; i < n; ++i) {
    TokenSequence s;
    s.ids.push_back(kClsId);
    auto t = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(regular)));
    const std::size_t len = 8 + rng.below(8);
    for (std::size_t k = 0; k < len; ++k) {
      s.ids.push_back(kNumSpecials + t);
      t = (t + 1) % regular;
    }
    s.ids.push_back(kSepId);
    out.push_back(std::move(s));
  }
  return out;
}

TrainConfig quick_config() {
  TrainConfig t;
  t.lr0 = 3e-3;
  t.batch_size = 8;
  t.max_len = 24;
  t.max_epochs = 3;
  t.val_every = 5;
  t.patience = 100;
  t.seed = 17;
  return t;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("linear decay schedule", "[trainer]") {
  CHECK(lr_at(0, 1000, 2e-5) == 2e-5);
  CHECK_THAT(lr_at(500, 1000, 2e-5), WithinRel(1e-5, 1e-12));
  CHECK(lr_at(1000, 1000, 2e-5) == 0.0);
  CHECK_THROWS_AS(lr_at(0, 0, 2e-5), ConfigError);
  CHECK_THROWS_AS(lr_at(11, 10, 2e-5), ConfigError);
  double prev = lr_at(0, 37, 1e-3);
  for (std::size_t s = 1; s <= 37; ++s) {
    const double lr = lr_at(s, 37, 1e-3);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK(prev == 0.0);
}

TEST_CASE("gradient clipping", "[trainer]") {
  ParamSet<double> g;
  g.add("a", {1});
  g.add("b", {1});
  g[0].data[0] = 3.0;
  g[1].data[0] = 4.0;
  CHECK(clip_gradients(g, 1.0) == 5.0);
  CHECK_THAT(g[0].data[0], WithinAbs(0.6, 1e-15));
  CHECK_THAT(g[1].data[0], WithinAbs(0.8, 1e-15));

  g[0].data[0] = 0.3;
  g[1].data[0] = 0.4;
  clip_gradients(g, 1.0);
  CHECK(g[0].data[0] == 0.3);
  CHECK(g[1].data[0] == 0.4);

  g.fill(0.0);
  CHECK(clip_gradients(g, 1.0) == 0.0);
  CHECK(g[0].data[0] == 0.0);

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    ParamSet<float> r;
    r.add("x", {17});
    r.add("y", {3, 5});
    for (auto& t : r)
      for (auto& v : t.data) v = static_cast<float>(10.0 * rng.normal());
    clip_gradients(r, 1.0);
    CHECK(global_norm(r) <= 1.0 + 1e-6);
  }
}

TEST_CASE("AdamW scalar update matches the update rule by hand", "[trainer]") {
  // m = 0.1 * 0.1 = 0.01, v = 0.001 * 0.01 = 1e-5
  // mhat = 0.01 / 0.1 = 0.1, vhat = 1e-5 / 0.001 = 0.01, sqrt(vhat) = 0.1
  // decay: 1 - 0.1 * 0.01 * 1 = 0.999; step: 0.1 * 0.1 / (0.1 + 1e-8)
  const double expected = 0.999 - 0.1 * 0.1 / (0.1 + 1e-8);
  auto p = scalar_set("w", 1.0);
  auto g = scalar_set("w", 0.1);
  auto st = AdamState<double>::zeros_like(p);
  adamw_step(p, g, st, 1, 0.1, AdamWParams{});
  CHECK_THAT(p[0].data[0], WithinAbs(expected, 1e-12));
  CHECK_THAT(p[0].data[0], WithinAbs(0.899, 1e-6));
  CHECK_THAT(st.m[0].data[0], WithinAbs(0.01, 1e-15));
  CHECK_THAT(st.v[0].data[0], WithinAbs(1e-5, 1e-18));
}

TEST_CASE("AdamW decay cases", "[trainer]") {
  auto g = scalar_set("w", 0.0);
  {
    auto p = scalar_set("w", 1.7);
    auto st = AdamState<double>::zeros_like(p);
    AdamWParams hp;
    hp.weight_decay = 0.0;
    adamw_step(p, g, st, 1, 0.1, hp);
    CHECK(p[0].data[0] == 1.7);
  }
  {
    auto p = scalar_set("w", 1.0);
    auto st = AdamState<double>::zeros_like(p);
    adamw_step(p, g, st, 1, 0.1, AdamWParams{});
    CHECK_THAT(p[0].data[0], WithinAbs(1.0 - 0.001, 1e-15));
  }
  {
    auto p = scalar_set("layers.0.ffn.in.bias", 1.0);
    auto st = AdamState<double>::zeros_like(p);
    adamw_step(p, g, st, 1, 0.1, AdamWParams{}, &Encoder<double>::is_decay_exempt);
    CHECK(p[0].data[0] == 1.0);
  }
  auto p = scalar_set("w", 1.0);
  auto st = AdamState<double>::zeros_like(p);
  CHECK_THROWS_AS(adamw_step(p, g, st, 0, 0.1, AdamWParams{}), ConfigError);
}

TEST_CASE("early stopping on a scripted loss sequence", "[trainer]") {
  EarlyStopper s(5);
  const double losses[] = {2.0, 2.1, 2.1, 2.1, 2.1, 2.1};
  for (int i = 0; i < 5; ++i) CHECK_FALSE(s.observe(losses[i]));
  CHECK(s.observe(losses[5]));
  CHECK(s.best_check() == 0);
  CHECK(*s.best() == 2.0);

  EarlyStopper ties(2);
  CHECK_FALSE(ties.observe(1.0));
  CHECK_FALSE(ties.observe(1.0));
  CHECK(ties.observe(1.0));

  EarlyStopper recover(2);
  CHECK_FALSE(recover.observe(1.0));
  CHECK_FALSE(recover.observe(1.5));
  CHECK_FALSE(recover.observe(0.5));
  CHECK(recover.best_check() == 2);
  CHECK_FALSE(recover.observe(0.6));
  CHECK(recover.observe(0.7));
}

TEST_CASE("config validation", "[trainer]") {
  TrainConfig t;
  CHECK_NOTHROW(t.validate());
  t.patience = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = TrainConfig{};
  t.lr0 = 0.0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = TrainConfig{};
  t.mask.keep_frac = 0.3;
  CHECK_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("perplexity of a uniform head equals the vocabulary size", "[trainer]") {
  auto model = init_model<float>(small_model(200));
  auto& w = model.params()[model.head_weight_slot()].data;
  auto& b = model.params()[model.head_bias_slot()].data;
  std::fill(w.begin(), w.end(), 0.0f);
  std::fill(b.begin(), b.end(), 0.0f);
  const auto docs = patterned(40, 200, 1);
  const double ppl = evaluate_perplexity(model, docs);
  CHECK_THAT(ppl, WithinRel(200.0, 0.05));
  CHECK_THAT(ppl, WithinRel(200.0, 1e-5));
  CHECK(evaluate_perplexity(model, docs) == ppl);
  CHECK_THROWS_AS(evaluate_perplexity(model, {}), EmptyCorpus);

  // A head that puts all mass on the target gives loss 0 and perplexity 1:
  // a single-token vocabulary row is enough when every label is that token.
  TokenSequence one;
  one.ids = {kClsId, kNumSpecials, kSepId};
  MaskPolicy always;
  always.select_prob = 1.0;
  std::fill(b.begin(), b.end(), -1e4f);
  b[kNumSpecials] = 1e4f;
  CHECK_THAT(evaluate_perplexity(model, {one}, always), WithinAbs(1.0, 1e-9));
}

TEST_CASE("pretraining reduces heldout loss and logs consistently", "[trainer]") {
  const std::size_t vocab = 30;
  const auto train = patterned(96, vocab, 2);
  const auto heldout = patterned(24, vocab, 3);
  const auto cfg = quick_config();
  testing::TempDir dir;
  std::size_t observed = 0;
  const auto res = pretrain(init_model<float>(small_model(vocab)), train, heldout, cfg, dir.path(),
                            [&](const TrainReport&) { ++observed; });
  const auto& r = res.report;
  CHECK(r.total_steps == 3 * 12);
  CHECK(r.steps.size() == 36);
  CHECK(observed > 36);
  CHECK(r.stop_reason == StopReason::MaxEpochs);
  CHECK(r.epochs_run == 3);
  CHECK(r.validations.size() == 36 / 5 + 1);
  CHECK(r.validations.back().step == 36);
  CHECK(r.best_val_loss < r.initial_val_loss);

  double best = r.validations.front().val_loss;
  std::size_t arg = r.validations.front().step;
  for (const auto& v : r.validations) {
    CHECK(v.perplexity == std::exp(v.val_loss));
    if (v.val_loss < best) {
      best = v.val_loss;
      arg = v.step;
    }
  }
  CHECK(r.best_step == arg);
  CHECK(r.best_val_loss == best);

  for (std::size_t i = 0; i < r.steps.size(); ++i) {
    CHECK(r.steps[i].step == i + 1);
    CHECK(r.steps[i].lr == lr_at(i, r.total_steps, cfg.lr0));
    CHECK(r.steps[i].clipped_norm <= cfg.clip_norm + 1e-6);
    if (i > 0) CHECK(r.steps[i].lr <= r.steps[i - 1].lr);
  }

  for (const char* f : {"config.json", "log.jsonl", "best.ckpt", "last.ckpt"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  const auto best_loaded = load_checkpoint(dir / "best.ckpt");
  CHECK(best_loaded.params() == res.best.params());
  const auto last_loaded = load_checkpoint(dir / "last.ckpt");
  CHECK(last_loaded.params() == res.last.params());

  std::ifstream log(dir / "log.jsonl");
  std::string line;
  std::size_t steps = 0, vals = 0, stops = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    const auto ev = j.at("event").get<std::string>();
    steps += ev == "step";
    vals += ev == "validation";
    stops += ev == "stop";
  }
  CHECK(steps == r.steps.size());
  CHECK(vals == r.validations.size());
  CHECK(stops == 1);
}

TEST_CASE("pretraining is bitwise deterministic", "[trainer]") {
  const std::size_t vocab = 30;
  const auto train = patterned(40, vocab, 4);
  const auto heldout = patterned(10, vocab, 5);
  auto cfg = quick_config();
  cfg.max_epochs = 2;
  testing::TempDir a, b;
  pretrain(init_model<float>(small_model(vocab)), train, heldout, cfg, a.path());
  pretrain(init_model<float>(small_model(vocab)), train, heldout, cfg, b.path());
  for (const char* f : {"config.json", "log.jsonl", "best.ckpt", "last.ckpt"}) {
    CHECK(slurp(a / f) == slurp(b / f));
  }
  cfg.seed = 18;
  testing::TempDir c;
  pretrain(init_model<float>(small_model(vocab)), train, heldout, cfg, c.path());
  CHECK(slurp(a / "last.ckpt") != slurp(c / "last.ckpt"));
}

TEST_CASE("validation cadence and early stop", "[trainer]") {
  const std::size_t vocab = 30;
  const auto train = patterned(16, vocab, 6);
  const auto heldout = patterned(8, vocab, 7);
  auto cfg = quick_config();
  cfg.max_epochs = 2;
  cfg.val_every = 1000;
  const auto one = pretrain(init_model<float>(small_model(vocab)), train, heldout, cfg);
  CHECK(one.report.validations.size() == 1);
  CHECK(one.report.stop_reason == StopReason::MaxEpochs);

  // An update far below float resolution leaves the weights, and so the
  // validation loss, unchanged: a tie, which must not count as improvement.
  cfg.lr0 = 1e-30;
  cfg.adamw.weight_decay = 0.0;
  cfg.val_every = 1;
  cfg.patience = 1;
  cfg.max_epochs = 10;
  const auto early = pretrain(init_model<float>(small_model(vocab)), train, heldout, cfg);
  CHECK(early.report.stop_reason == StopReason::EarlyStop);
  CHECK(early.report.validations.size() == 2);
  CHECK(early.report.best_step == 1);
}

TEST_CASE("pretrain input errors", "[trainer]") {
  const auto docs = patterned(4, 30, 8);
  auto cfg = quick_config();
  CHECK_THROWS_AS(pretrain(init_model<float>(small_model(30)), {}, docs, cfg), EmptyCorpus);
  CHECK_THROWS_AS(pretrain(init_model<float>(small_model(30)), docs, {}, cfg), EmptyCorpus);
  TokenSequence bare;
  bare.ids = {kClsId, kSepId};
  CHECK_THROWS_AS(pretrain(init_model<float>(small_model(30)), docs, {bare}, cfg), EmptyMask);
}
