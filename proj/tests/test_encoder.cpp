// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <cmath>

#include "ehrlm/checkpoint.hpp"
#include "ehrlm/encoder.hpp"
#include "ehrlm/error.hpp"
#include "support.hpp"

using namespace ehrlm;

namespace {

ModelConfig tiny_config(std::size_t vocab = 50, std::size_t layers = 2, std::size_t d = 16,
                        std::size_t heads = 2, std::size_t ffn = 32) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.max_len = 16;
  c.layers = layers;
  c.hidden = d;
  c.heads = heads;
  c.ffn_dim = ffn;
  c.seed = 99;
  return c;
}

// Two rows, the second padded, with labels at a few content positions.
MaskedBatch tiny_batch(std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  MaskedBatch b;
  b.rows = 2;
  b.width = 7;
  b.input_ids.assign(14, kPadId);
  b.labels.assign(14, kIgnoreLabel);
  b.attention_mask.assign(14, 0);
  const std::size_t lengths[2] = {7, 5};
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < lengths[r]; ++c) {
      TokenId id = kNumSpecials + static_cast<TokenId>(rng.below(vocab - kNumSpecials));
      if (c == 0) id = kClsId;
      if (c + 1 == lengths[r]) id = kSepId;
      b.input_ids[r * 7 + c] = id;
      b.attention_mask[r * 7 + c] = 1;
    }
  }
  b.labels[1] = b.input_ids[1];
  b.input_ids[1] = kMaskId;
  b.labels[3] = b.input_ids[3];
  b.labels[7 + 2] = 11;
  return b;
}

double loss_of(const Encoder<double>& m, const MaskedBatch& b) {
  const auto s = masked_nll(m, b);
  return s.sum / static_cast<double>(s.count);
}

}  // namespace

TEST_CASE("initialization is seeded and shaped") {
  const auto c = tiny_config();
  const auto a = init_model<float>(c);
  const auto b = init_model<float>(c);
  CHECK(a.params() == b.params());
  auto c2 = c;
  c2.seed = 100;
  CHECK_FALSE(init_model<float>(c2).params() == a.params());

  for (const auto& t : a.params()) {
    if (t.name.ends_with(".scale")) {
      for (float v : t.data) CHECK(v == 1.0f);
    } else if (t.name.ends_with(".bias") || t.name.ends_with(".offset")) {
      for (float v : t.data) CHECK(v == 0.0f);
    }
  }
  const auto& tok = a.params()[a.token_slot()].data;
  double sq = 0;
  for (float v : tok) sq += double(v) * v;
  CHECK(std::sqrt(sq / tok.size()) == Catch::Approx(0.02).epsilon(0.1));
}

TEST_CASE("invalid configs are rejected") {
  auto c = tiny_config(100, 1, 8, 3);
  CHECK_THROWS_AS(init_model<float>(c), ConfigError);
  c = tiny_config();
  c.max_len = 1;
  CHECK_THROWS_AS(init_model<float>(c), ConfigError);
  c = tiny_config();
  c.layers = 0;
  CHECK_THROWS_AS(init_model<float>(c), ConfigError);
}

TEST_CASE("parameter count matches a hand tally") {
  ModelConfig c;
  c.vocab_size = 100;
  c.hidden = 16;
  c.layers = 2;
  c.heads = 2;
  c.ffn_dim = 64;
  c.max_len = 32;
  // token 100*16 + position 32*16 + segment 2*16 + norm 2*16            = 2176
  // per layer: q,k,v,o 4*(16*16+16) + norm 32 + in 16*64+64 + out 64*16+16 + norm 32 = 3280
  // head 16*100 + 100                                                    = 1700
  const std::size_t hand = 2176 + 2 * 3280 + 1700;
  CHECK(hand == 10436);
  CHECK(parameter_count(c) == hand);
  CHECK(init_model<float>(c).params().total_numel() == hand);
}

TEST_CASE("forward shapes and normalized softmax") {
  const auto m = init_model<float>(tiny_config());
  const auto b = tiny_batch(50, 1);
  const auto out = forward(m, b);
  CHECK(out.logits.size() == 2 * 7 * 50);
  CHECK(out.hidden_states.size() == 2 * 7 * 16);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 7; ++c) {
      const float* l = out.logits_at(r, c);
      double mx = *std::max_element(l, l + 50), z = 0;
      for (int j = 0; j < 50; ++j) z += std::exp(l[j] - mx);
      double total = 0;
      for (int j = 0; j < 50; ++j) total += std::exp(l[j] - mx) / z;
      CHECK(std::abs(total - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("forward input errors") {
  const auto m = init_model<float>(tiny_config());
  auto b = tiny_batch(50, 1);
  b.input_ids[2] = 50;
  CHECK_THROWS_AS(forward(m, b), InputError);
  TokenSequence longseq;
  longseq.ids.assign(17, 7);
  CHECK_THROWS_AS(pool_embeddings(m, longseq, PoolMode::Cls), InputError);
}

TEST_CASE("hand-computed one-layer one-head d=2 model") {
  ModelConfig c;
  c.vocab_size = 6;
  c.max_len = 4;
  c.layers = 1;
  c.hidden = 2;
  c.heads = 1;
  c.ffn_dim = 2;
  Encoder<double> m(c);
  auto set = [&](const std::string& name, std::vector<double> values) {
    auto slot = m.params().find(name);
    REQUIRE(slot);
    REQUIRE(m.params()[*slot].data.size() == values.size());
    m.params()[*slot].data = std::move(values);
  };
  const std::vector<double> tok = {0.1, 0.2, 0.3, -0.1, 0.5, 0.4, 0.7, -0.2, -0.3, 0.6, 0.2, 0.9};
  const std::vector<double> pos = {0.05, -0.05, 0.02, 0.08, 0, 0, 0, 0};
  const std::vector<double> seg = {0.01, 0.03, 0, 0};
  set("embeddings.token", tok);
  set("embeddings.position", pos);
  set("embeddings.segment", seg);
  set("embeddings.norm.scale", {1.5, 0.5});
  set("embeddings.norm.offset", {0.1, -0.2});
  set("layers.0.attention.query.weight", {0.3, -0.2, 0.4, 0.1});
  set("layers.0.attention.query.bias", {0.01, 0.02});
  set("layers.0.attention.key.weight", {-0.5, 0.2, 0.3, 0.6});
  set("layers.0.attention.key.bias", {0.0, -0.1});
  set("layers.0.attention.value.weight", {0.7, 0.1, -0.3, 0.2});
  set("layers.0.attention.value.bias", {0.05, 0.0});
  set("layers.0.attention.output.weight", {0.9, -0.4, 0.2, 0.8});
  set("layers.0.attention.output.bias", {0.0, 0.1});
  set("layers.0.attention.norm.scale", {1.0, 2.0});
  set("layers.0.attention.norm.offset", {0.0, 0.3});
  set("layers.0.ffn.in.weight", {0.6, -0.7, 0.2, 0.5});
  set("layers.0.ffn.in.bias", {0.1, -0.1});
  set("layers.0.ffn.out.weight", {0.4, 0.3, -0.6, 0.9});
  set("layers.0.ffn.out.bias", {-0.05, 0.05});
  set("layers.0.ffn.norm.scale", {0.8, 1.2});
  set("layers.0.ffn.norm.offset", {0.2, -0.1});

  // Oracle: direct transcription of the layer equations for ids {2, 4}.
  using V = std::array<double, 2>;
  auto ln = [](V x, V g, V b) {
    const double mean = (x[0] + x[1]) / 2;
    const double var = ((x[0] - mean) * (x[0] - mean) + (x[1] - mean) * (x[1] - mean)) / 2;
    const double r = 1 / std::sqrt(var + 1e-12);
    return V{g[0] * (x[0] - mean) * r + b[0], g[1] * (x[1] - mean) * r + b[1]};
  };
  auto lin = [](V x, std::array<double, 4> w, V b) {
    return V{x[0] * w[0] + x[1] * w[2] + b[0], x[0] * w[1] + x[1] * w[3] + b[1]};
  };
  auto gelu = [](double x) { return 0.5 * x * (1 + std::erf(x / std::sqrt(2.0))); };
  const int ids[2] = {2, 4};
  V h[2];
  for (int i = 0; i < 2; ++i) {
    V e{tok[ids[i] * 2] + pos[i * 2] + seg[0], tok[ids[i] * 2 + 1] + pos[i * 2 + 1] + seg[1]};
    h[i] = ln(e, {1.5, 0.5}, {0.1, -0.2});
  }
  V q[2], k[2], v[2];
  for (int i = 0; i < 2; ++i) {
    q[i] = lin(h[i], {0.3, -0.2, 0.4, 0.1}, {0.01, 0.02});
    k[i] = lin(h[i], {-0.5, 0.2, 0.3, 0.6}, {0.0, -0.1});
    v[i] = lin(h[i], {0.7, 0.1, -0.3, 0.2}, {0.05, 0.0});
  }
  V expected[2];
  for (int i = 0; i < 2; ++i) {
    double s[2];
    for (int j = 0; j < 2; ++j) s[j] = (q[i][0] * k[j][0] + q[i][1] * k[j][1]) / std::sqrt(2.0);
    const double a0 = std::exp(s[0]) / (std::exp(s[0]) + std::exp(s[1]));
    const double a1 = 1 - a0;
    V ctx{a0 * v[0][0] + a1 * v[1][0], a0 * v[0][1] + a1 * v[1][1]};
    V attn = lin(ctx, {0.9, -0.4, 0.2, 0.8}, {0.0, 0.1});
    V h1 = ln({attn[0] + h[i][0], attn[1] + h[i][1]}, {1.0, 2.0}, {0.0, 0.3});
    V pre = lin(h1, {0.6, -0.7, 0.2, 0.5}, {0.1, -0.1});
    V f = lin({gelu(pre[0]), gelu(pre[1])}, {0.4, 0.3, -0.6, 0.9}, {-0.05, 0.05});
    expected[i] = ln({f[0] + h1[0], f[1] + h1[1]}, {0.8, 1.2}, {0.2, -0.1});
  }

  TokenSequence seq{{2, 4}};
  const auto batch = plain_batch(std::span<const TokenSequence>(&seq, 1));
  const auto out = forward(m, batch);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) CHECK(std::abs(out.hidden_at(0, i)[j] - expected[i][j]) <= 1e-6);
  }
}

TEST_CASE("mlm loss examples") {
  const std::vector<double> uniform = {0.5, 0.5, 0.5, 0.5};
  const std::vector<TokenId> one = {2};
  CHECK(mlm_loss<double>(uniform, one, 4) == Catch::Approx(std::log(4.0)).margin(1e-12));
  const std::vector<double> peaked = {10, 0, 0, 0};
  const std::vector<TokenId> zero = {0};
  CHECK(mlm_loss<double>(peaked, zero, 4) == Catch::Approx(std::log1p(3 * std::exp(-10.0))).margin(1e-15));
  CHECK(mlm_loss<double>(peaked, zero, 4) == Catch::Approx(1.36e-4).epsilon(0.01));
  const std::vector<TokenId> ignored = {kIgnoreLabel};
  CHECK_THROWS_AS(mlm_loss<double>(peaked, ignored, 4), EmptyMask);
}

TEST_CASE("loss-only path agrees with full forward") {
  const auto m = init_model<double>(tiny_config());
  const auto b = tiny_batch(50, 4);
  const auto out = forward(m, b);
  const double full = mlm_loss<double>(out.logits, b.labels, 50);
  CHECK(loss_of(m, b) == Catch::Approx(full).margin(1e-12));
  CHECK(compute_gradients(m, b).loss == Catch::Approx(full).margin(1e-12));
}

TEST_CASE("analytic gradients match central differences") {
  for (std::uint64_t trial = 0; trial < 2; ++trial) {
    auto config = trial == 0 ? tiny_config(50, 2, 16, 2, 32) : tiny_config(23, 1, 12, 3, 20);
    config.seed = 7 + trial;
    auto m = init_model<double>(config);
    // Larger weights than the init so nonlinearities are exercised.
    Rng rng(trial);
    for (auto& t : m.params()) {
      for (auto& v : t.data) v += 0.3 * rng.normal();
    }
    const auto b = tiny_batch(config.vocab_size, 10 + trial);
    const auto g = compute_gradients(m, b);
    const double h = 1e-4;
    double worst = 0;
    std::string worst_name;
    for (std::size_t slot = 0; slot < m.params().size(); ++slot) {
      auto& t = m.params()[slot];
      for (std::size_t i = 0; i < t.data.size(); ++i) {
        const double saved = t.data[i];
        t.data[i] = saved + h;
        const double up = loss_of(m, b);
        t.data[i] = saved - h;
        const double down = loss_of(m, b);
        t.data[i] = saved;
        const double numeric = (up - down) / (2 * h);
        const double analytic = g.grads[slot].data[i];
        const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        if (rel > worst) {
          worst = rel;
          worst_name = t.name + "[" + std::to_string(i) + "]";
        }
      }
    }
    INFO("worst " << worst_name << " " << worst);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("gradients under fixed dropout masks match central differences") {
  auto config = tiny_config(20, 1, 8, 2, 12);
  config.dropout = 0.2;
  const auto m0 = init_model<double>(config);
  auto m = m0;
  const auto b = tiny_batch(20, 3);
  auto loss_with_masks = [&](const Encoder<double>& model) {
    Rng r(5);
    return compute_gradients(model, b, &r).loss;
  };
  Rng r(5);
  const auto g = compute_gradients(m, b, &r);
  const double h = 1e-5;
  double worst = 0;
  for (std::size_t slot = 0; slot < m.params().size(); ++slot) {
    auto& t = m.params()[slot];
    for (std::size_t i = 0; i < t.data.size(); i += 3) {
      const double saved = t.data[i];
      t.data[i] = saved + h;
      const double up = loss_with_masks(m);
      t.data[i] = saved - h;
      const double down = loss_with_masks(m);
      t.data[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = g.grads[slot].data[i];
      worst = std::max(worst, std::abs(analytic - numeric) /
                                  std::max({std::abs(analytic), std::abs(numeric), 1e-6}));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("unused segment row has exactly zero gradient") {
  const auto m = init_model<double>(tiny_config());
  const auto g = compute_gradients(m, tiny_batch(50, 2));
  const auto& seg = g.grads[m.segment_slot()].data;
  for (std::size_t j = 16; j < 32; ++j) CHECK(seg[j] == 0.0);
  bool row0_nonzero = false;
  for (std::size_t j = 0; j < 16; ++j) row0_nonzero |= seg[j] != 0.0;
  CHECK(row0_nonzero);
}

TEST_CASE("no labels means no gradients") {
  const auto m = init_model<double>(tiny_config());
  auto b = tiny_batch(50, 2);
  std::fill(b.labels.begin(), b.labels.end(), kIgnoreLabel);
  CHECK_THROWS_AS(compute_gradients(m, b), EmptyMask);
}

TEST_CASE("PAD positions do not affect real positions") {
  const auto m = init_model<float>(tiny_config());
  auto b = tiny_batch(50, 6);
  const auto before = forward(m, b);
  for (std::size_t c = 5; c < 7; ++c) b.input_ids[7 + c] = 20 + static_cast<TokenId>(c);
  const auto after = forward(m, b);
  for (std::size_t c = 0; c < 5; ++c) {
    for (std::size_t j = 0; j < 50; ++j) {
      CHECK(std::abs(before.logits_at(1, c)[j] - after.logits_at(1, c)[j]) <= 1e-6);
    }
  }
}

TEST_CASE("swapping two content tokens changes the output") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto c = tiny_config();
    c.seed = seed;
    const auto m = init_model<float>(c);
    TokenSequence a{{kClsId, 10, 20, kSepId}}, b{{kClsId, 20, 10, kSepId}};
    const auto pa = pool_embeddings(m, a, PoolMode::Cls);
    const auto pb = pool_embeddings(m, b, PoolMode::Cls);
    CHECK(pa != pb);
  }
}

TEST_CASE("pooling modes") {
  const auto m = init_model<float>(tiny_config());
  TokenSequence seq{{kClsId, 12, 13, kSepId}};
  const auto out = forward(m, plain_batch(std::span<const TokenSequence>(&seq, 1)));
  const auto cls = pool_embeddings(m, seq, PoolMode::Cls);
  for (std::size_t j = 0; j < 16; ++j) CHECK(cls[j] == out.hidden_at(0, 0)[j]);

  TokenSequence single{{kClsId, 12, kSepId}};
  const auto single_out = forward(m, plain_batch(std::span<const TokenSequence>(&single, 1)));
  const auto mean = pool_embeddings(m, single, PoolMode::Mean);
  for (std::size_t j = 0; j < 16; ++j) CHECK(mean[j] == single_out.hidden_at(0, 1)[j]);

  TokenSequence empty{{kClsId, kSepId}};
  CHECK_THROWS_AS(pool_embeddings(m, empty, PoolMode::Mean), EmptyContent);
  CHECK(parse_pool_mode("MEAN") == PoolMode::Mean);
  CHECK_THROWS_AS(parse_pool_mode("max"), ConfigError);
}

TEST_CASE("checkpoint round-trip and corruption") {
  testing::TempDir dir;
  auto c = tiny_config();
  c.dropout = 0.1;
  const auto m = init_model<float>(c);
  save_checkpoint(m, dir / "m.ckpt");
  const auto back = load_checkpoint(dir / "m.ckpt");
  CHECK(back.config() == m.config());
  CHECK(back.params() == m.params());
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(m));

  auto bytes = serialize_checkpoint(m);
  bytes[bytes.size() - 100] ^= 0x01;
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), CorruptCheckpoint);

  bytes = serialize_checkpoint(m);
  bytes[8] = 9;  // version
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), VersionError);

  bytes = serialize_checkpoint(m);
  bytes.resize(bytes.size() / 2);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), CorruptCheckpoint);

  auto smaller = c;
  smaller.vocab_size = 40;
  try {
    load_checkpoint(dir / "m.ckpt", smaller);
    FAIL("expected VersionError");
  } catch (const VersionError& e) {
    CHECK(std::string(e.what()).find("[50,16]") != std::string::npos);
  }
  CHECK(load_checkpoint(dir / "m.ckpt", c).params() == m.params());
}

TEST_CASE("checkpoint tensor directory is sorted") {
  const auto bytes = serialize_checkpoint(init_model<float>(tiny_config()));
  // Walk the header: magic, version, config, then names.
  std::size_t pos = 12;
  std::uint64_t cfg_len = 0;
  for (int i = 0; i < 8; ++i) cfg_len |= std::uint64_t(bytes[pos + i]) << (8 * i);
  pos += 8 + cfg_len;
  std::uint32_t n = 0;
  for (int i = 0; i < 4; ++i) n |= std::uint32_t(bytes[pos + i]) << (8 * i);
  pos += 4;
  std::vector<std::string> names;
  for (std::uint32_t t = 0; t < n; ++t) {
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= std::uint32_t(bytes[pos + i]) << (8 * i);
    pos += 4;
    names.emplace_back(reinterpret_cast<const char*>(&bytes[pos]), len);
    pos += len;
    std::uint32_t rank = 0;
    for (int i = 0; i < 4; ++i) rank |= std::uint32_t(bytes[pos + i]) << (8 * i);
    pos += 4 + 8 * rank + 16;
  }
  CHECK(std::is_sorted(names.begin(), names.end()));
  CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());
  CHECK(names.size() == 5 + 2 * 16 + 2);
}
