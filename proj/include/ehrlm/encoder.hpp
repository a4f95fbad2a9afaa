// SPDX-License-Identifier: Apache-2.0
//
// Post-LN transformer encoder with an MLM head and hand-written backward
// pass. Templated on the scalar so the same code trains in float and is
// gradient-checked in double.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ehrlm/error.hpp"
#include "ehrlm/mlm.hpp"
#include "ehrlm/rng.hpp"
#include "ehrlm/tensor.hpp"
#include "ehrlm/tokenizer.hpp"

namespace ehrlm {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t max_len = 512;
  std::size_t layers = 12;
  std::size_t hidden = 768;
  std::size_t heads = 12;
  std::size_t ffn_dim = 3072;
  double dropout = 0.0;
  double init_std = 0.02;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Number of scalars in a model with this configuration.
std::size_t parameter_count(const ModelConfig& config);

inline constexpr std::size_t kSegments = 2;
inline constexpr double kLayerNormEps = 1e-12;

enum class PoolMode { Cls, Mean };

PoolMode parse_pool_mode(const std::string& name);
std::string pool_mode_name(PoolMode mode);

template <typename T>
class Encoder {
 public:
  struct Layer {
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t attn_gamma, attn_beta;
    std::size_t w_in, b_in, w_out, b_out;
    std::size_t ffn_gamma, ffn_beta;
  };

  /// All parameters zero; see init_model for the seeded initialization.
  explicit Encoder(const ModelConfig& config) : config_(config) {
    config_.validate();
    const auto d = config_.hidden, f = config_.ffn_dim, v = config_.vocab_size;
    token_ = params_.add("embeddings.token", {v, d});
    position_ = params_.add("embeddings.position", {config_.max_len, d});
    segment_ = params_.add("embeddings.segment", {kSegments, d});
    emb_gamma_ = params_.add("embeddings.norm.scale", {d});
    emb_beta_ = params_.add("embeddings.norm.offset", {d});
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      Layer s{};
      s.wq = params_.add(p + "attention.query.weight", {d, d});
      s.bq = params_.add(p + "attention.query.bias", {d});
      s.wk = params_.add(p + "attention.key.weight", {d, d});
      s.bk = params_.add(p + "attention.key.bias", {d});
      s.wv = params_.add(p + "attention.value.weight", {d, d});
      s.bv = params_.add(p + "attention.value.bias", {d});
      s.wo = params_.add(p + "attention.output.weight", {d, d});
      s.bo = params_.add(p + "attention.output.bias", {d});
      s.attn_gamma = params_.add(p + "attention.norm.scale", {d});
      s.attn_beta = params_.add(p + "attention.norm.offset", {d});
      s.w_in = params_.add(p + "ffn.in.weight", {d, f});
      s.b_in = params_.add(p + "ffn.in.bias", {f});
      s.w_out = params_.add(p + "ffn.out.weight", {f, d});
      s.b_out = params_.add(p + "ffn.out.bias", {d});
      s.ffn_gamma = params_.add(p + "ffn.norm.scale", {d});
      s.ffn_beta = params_.add(p + "ffn.norm.offset", {d});
      layers_.push_back(s);
    }
    head_w_ = params_.add("head.weight", {d, v});
    head_b_ = params_.add("head.bias", {v});
  }

  const ModelConfig& config() const { return config_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  std::size_t token_slot() const { return token_; }
  std::size_t position_slot() const { return position_; }
  std::size_t segment_slot() const { return segment_; }
  std::size_t emb_gamma_slot() const { return emb_gamma_; }
  std::size_t emb_beta_slot() const { return emb_beta_; }
  const std::vector<Layer>& layer_slots() const { return layers_; }
  std::size_t head_weight_slot() const { return head_w_; }
  std::size_t head_bias_slot() const { return head_b_; }

  /// Same parameter values converted to another scalar type.
  template <typename U>
  Encoder<U> cast() const {
    Encoder<U> out(config_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& src = params_[i].data;
      auto& dst = out.params()[i].data;
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] = static_cast<U>(src[j]);
    }
    return out;
  }

  /// Scale/offset/bias tensors; the optimizer skips weight decay for these.
  static bool is_decay_exempt(const std::string& name) {
    auto ends_with = [&](std::string_view s) {
      return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    return ends_with(".bias") || ends_with(".scale") || ends_with(".offset");
  }

 private:
  ModelConfig config_;
  ParamSet<T> params_;
  std::size_t token_, position_, segment_, emb_gamma_, emb_beta_, head_w_, head_b_;
  std::vector<Layer> layers_;
};

/// Weights and embeddings ~ N(0, init_std) from Rng(config.seed) in parameter
/// order; biases and offsets 0; layer-norm scales 1.
template <typename T>
Encoder<T> init_model(const ModelConfig& config) {
  Encoder<T> model(config);
  Rng rng(config.seed);
  for (auto& t : model.params()) {
    const bool is_scale = t.name.ends_with(".scale");
    const bool is_zero = t.name.ends_with(".bias") || t.name.ends_with(".offset");
    for (auto& v : t.data) {
      if (is_scale) {
        v = T{1};
      } else if (is_zero) {
        v = T{0};
      } else {
        v = static_cast<T>(config.init_std * rng.normal());
      }
    }
  }
  return model;
}

namespace detail {

// y[S×N] = x[S×K] · W[K×N] + b[N]
template <typename T>
void linear(const T* x, std::size_t s, std::size_t k, const T* w, const T* b, std::size_t n, T* y) {
  for (std::size_t i = 0; i < s; ++i) {
    T* yi = y + i * n;
    std::copy(b, b + n, yi);
    const T* xi = x + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T a = xi[p];
      const T* wp = w + p * n;
      for (std::size_t j = 0; j < n; ++j) yi[j] += a * wp[j];
    }
  }
}

// Accumulates dW, db and writes dx (if non-null) for y = xW + b.
template <typename T>
void linear_backward(const T* x, std::size_t s, std::size_t k, const T* w, std::size_t n,
                     const T* dy, T* dx, T* dw, T* db) {
  for (std::size_t i = 0; i < s; ++i) {
    const T* dyi = dy + i * n;
    const T* xi = x + i * k;
    for (std::size_t j = 0; j < n; ++j) db[j] += dyi[j];
    for (std::size_t p = 0; p < k; ++p) {
      const T a = xi[p];
      T* dwp = dw + p * n;
      for (std::size_t j = 0; j < n; ++j) dwp[j] += a * dyi[j];
    }
    if (dx != nullptr) {
      T* dxi = dx + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T* wp = w + p * n;
        T acc{0};
        for (std::size_t j = 0; j < n; ++j) acc += wp[j] * dyi[j];
        dxi[p] = acc;
      }
    }
  }
}

template <typename T>
struct NormCache {
  std::vector<T> xhat;
  std::vector<T> rstd;
};

template <typename T>
void layer_norm(const T* x, std::size_t s, std::size_t d, const T* gamma, const T* beta, T* y,
                NormCache<T>& cache) {
  cache.xhat.resize(s * d);
  cache.rstd.resize(s);
  for (std::size_t i = 0; i < s; ++i) {
    const T* xi = x + i * d;
    T mean{0};
    for (std::size_t j = 0; j < d; ++j) mean += xi[j];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<T>(d);
    const T rstd = T{1} / std::sqrt(var + static_cast<T>(kLayerNormEps));
    cache.rstd[i] = rstd;
    for (std::size_t j = 0; j < d; ++j) {
      const T xh = (xi[j] - mean) * rstd;
      cache.xhat[i * d + j] = xh;
      y[i * d + j] = gamma[j] * xh + beta[j];
    }
  }
}

template <typename T>
void layer_norm_backward(const NormCache<T>& cache, std::size_t s, std::size_t d, const T* gamma,
                         const T* dy, T* dx, T* dgamma, T* dbeta) {
  std::vector<T> dxhat(d);
  for (std::size_t i = 0; i < s; ++i) {
    const T* dyi = dy + i * d;
    const T* xh = cache.xhat.data() + i * d;
    T sum_dxhat{0}, sum_dxhat_xhat{0};
    for (std::size_t j = 0; j < d; ++j) {
      dgamma[j] += dyi[j] * xh[j];
      dbeta[j] += dyi[j];
      dxhat[j] = dyi[j] * gamma[j];
      sum_dxhat += dxhat[j];
      sum_dxhat_xhat += dxhat[j] * xh[j];
    }
    const T scale = cache.rstd[i] / static_cast<T>(d);
    for (std::size_t j = 0; j < d; ++j) {
      dx[i * d + j] = scale * (static_cast<T>(d) * dxhat[j] - sum_dxhat - xh[j] * sum_dxhat_xhat);
    }
  }
}

template <typename T>
T gelu(T x) {
  return T{0.5} * x * (T{1} + std::erf(x / std::sqrt(T{2})));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T{0.5} * (T{1} + std::erf(x / std::sqrt(T{2})));
  const T pdf = std::exp(T{-0.5} * x * x) / std::sqrt(T{2} * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

// Inverted dropout: each entry is 0 or 1/(1-p).
template <typename T>
void draw_dropout(std::vector<T>& mask, std::size_t n, double p, Rng& rng) {
  mask.resize(n);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (auto& m : mask) m = rng.bernoulli(p) ? T{0} : keep;
}

template <typename T>
struct LayerCache {
  std::vector<T> x;  // layer input
  std::vector<T> q, k, v;
  std::vector<T> probs;       // heads × S × S
  std::vector<T> probs_drop;  // dropout mask on probs (empty when off)
  std::vector<T> ctx;
  std::vector<T> attn_drop;
  NormCache<T> norm1;
  std::vector<T> h1;  // post attention layer-norm
  std::vector<T> pre;  // FFN pre-activation S × F
  std::vector<T> act;  // GELU output
  std::vector<T> ffn_drop;
  NormCache<T> norm2;
};

/// Runs one sequence through the encoder and keeps what backward needs.
template <typename T>
class SequenceRunner {
 public:
  explicit SequenceRunner(const Encoder<T>& model) : model_(model) {
    caches_.resize(model.config().layers);
  }

  std::size_t length() const { return s_; }
  const std::vector<T>& output() const { return out_; }

  void forward(const TokenId* ids, const std::uint8_t* mask, std::size_t s, Rng* dropout_rng) {
    const auto& cfg = model_.config();
    const auto& P = model_.params();
    const std::size_t d = cfg.hidden, f = cfg.ffn_dim, nh = cfg.heads, dh = d / nh;
    const double p = dropout_rng != nullptr ? cfg.dropout : 0.0;
    s_ = s;
    ids_.assign(ids, ids + s);
    mask_.assign(mask, mask + s);
    for (std::size_t i = 0; i < s; ++i) {
      if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= cfg.vocab_size) {
        throw InputError("encoder", "token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                                        std::to_string(cfg.vocab_size));
      }
    }
    if (s > cfg.max_len) {
      throw InputError("encoder", "sequence length " + std::to_string(s) + " exceeds max_len " +
                                      std::to_string(cfg.max_len));
    }

    std::vector<T> sum(s * d);
    const T* tok = P[model_.token_slot()].data.data();
    const T* pos = P[model_.position_slot()].data.data();
    const T* seg = P[model_.segment_slot()].data.data();
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        sum[i * d + j] = tok[static_cast<std::size_t>(ids[i]) * d + j] + pos[i * d + j] + seg[j];
      }
    }
    std::vector<T> h(s * d);
    layer_norm(sum.data(), s, d, P[model_.emb_gamma_slot()].data.data(),
               P[model_.emb_beta_slot()].data.data(), h.data(), emb_norm_);
    emb_drop_.clear();
    if (p > 0) {
      draw_dropout(emb_drop_, s * d, p, *dropout_rng);
      for (std::size_t i = 0; i < s * d; ++i) h[i] *= emb_drop_[i];
    }

    const T scale = T{1} / std::sqrt(static_cast<T>(dh));
    const T neg_inf = -std::numeric_limits<T>::infinity();
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const auto& sl = model_.layer_slots()[l];
      auto& c = caches_[l];
      c.x = h;
      c.q.resize(s * d);
      c.k.resize(s * d);
      c.v.resize(s * d);
      linear(h.data(), s, d, P[sl.wq].data.data(), P[sl.bq].data.data(), d, c.q.data());
      linear(h.data(), s, d, P[sl.wk].data.data(), P[sl.bk].data.data(), d, c.k.data());
      linear(h.data(), s, d, P[sl.wv].data.data(), P[sl.bv].data.data(), d, c.v.data());

      c.probs.assign(nh * s * s, T{0});
      c.ctx.assign(s * d, T{0});
      c.probs_drop.clear();
      if (p > 0) draw_dropout(c.probs_drop, nh * s * s, p, *dropout_rng);
      for (std::size_t hd = 0; hd < nh; ++hd) {
        const std::size_t off = hd * dh;
        for (std::size_t i = 0; i < s; ++i) {
          T* row = c.probs.data() + (hd * s + i) * s;
          T mx = neg_inf;
          for (std::size_t j = 0; j < s; ++j) {
            if (mask[j] == 0) {
              row[j] = neg_inf;
              continue;
            }
            T acc{0};
            for (std::size_t e = 0; e < dh; ++e) acc += c.q[i * d + off + e] * c.k[j * d + off + e];
            row[j] = acc * scale;
            mx = std::max(mx, row[j]);
          }
          T z{0};
          for (std::size_t j = 0; j < s; ++j) {
            row[j] = mask[j] == 0 ? T{0} : std::exp(row[j] - mx);
            z += row[j];
          }
          for (std::size_t j = 0; j < s; ++j) row[j] /= z;
          const T* drop = c.probs_drop.empty() ? nullptr : c.probs_drop.data() + (hd * s + i) * s;
          T* ci = c.ctx.data() + i * d + off;
          for (std::size_t j = 0; j < s; ++j) {
            const T w = drop != nullptr ? row[j] * drop[j] : row[j];
            if (w == T{0}) continue;
            const T* vj = c.v.data() + j * d + off;
            for (std::size_t e = 0; e < dh; ++e) ci[e] += w * vj[e];
          }
        }
      }

      std::vector<T> attn(s * d);
      linear(c.ctx.data(), s, d, P[sl.wo].data.data(), P[sl.bo].data.data(), d, attn.data());
      c.attn_drop.clear();
      if (p > 0) {
        draw_dropout(c.attn_drop, s * d, p, *dropout_rng);
        for (std::size_t i = 0; i < s * d; ++i) attn[i] *= c.attn_drop[i];
      }
      for (std::size_t i = 0; i < s * d; ++i) attn[i] += h[i];
      c.h1.resize(s * d);
      layer_norm(attn.data(), s, d, P[sl.attn_gamma].data.data(), P[sl.attn_beta].data.data(),
                 c.h1.data(), c.norm1);

      c.pre.resize(s * f);
      c.act.resize(s * f);
      linear(c.h1.data(), s, d, P[sl.w_in].data.data(), P[sl.b_in].data.data(), f, c.pre.data());
      for (std::size_t i = 0; i < s * f; ++i) c.act[i] = gelu(c.pre[i]);
      std::vector<T> ffn(s * d);
      linear(c.act.data(), s, f, P[sl.w_out].data.data(), P[sl.b_out].data.data(), d, ffn.data());
      c.ffn_drop.clear();
      if (p > 0) {
        draw_dropout(c.ffn_drop, s * d, p, *dropout_rng);
        for (std::size_t i = 0; i < s * d; ++i) ffn[i] *= c.ffn_drop[i];
      }
      for (std::size_t i = 0; i < s * d; ++i) ffn[i] += c.h1[i];
      layer_norm(ffn.data(), s, d, P[sl.ffn_gamma].data.data(), P[sl.ffn_beta].data.data(),
                 h.data(), c.norm2);
    }
    out_ = std::move(h);
  }

  /// Back-propagates d(loss)/d(output) into `grads`.
  void backward(std::vector<T> dh, ParamSet<T>& grads) const {
    const auto& cfg = model_.config();
    const auto& P = model_.params();
    const std::size_t s = s_, d = cfg.hidden, f = cfg.ffn_dim, nh = cfg.heads, dh_ = d / nh;
    const T scale = T{1} / std::sqrt(static_cast<T>(dh_));
    std::vector<T> tmp(s * d), dffn(s * d), dact, dattn(s * d), dctx(s * d), dq, dk, dv, dprow(s),
        dx(s * d);

    for (std::size_t l = cfg.layers; l-- > 0;) {
      const auto& sl = model_.layer_slots()[l];
      const auto& c = caches_[l];
      // Output layer-norm: dh is d(out); dffn is d(residual sum).
      layer_norm_backward(c.norm2, s, d, P[sl.ffn_gamma].data.data(), dh.data(), dffn.data(),
                          grads[sl.ffn_gamma].data.data(), grads[sl.ffn_beta].data.data());
      std::vector<T> dh1 = dffn;  // residual branch
      if (!c.ffn_drop.empty()) {
        for (std::size_t i = 0; i < s * d; ++i) dffn[i] *= c.ffn_drop[i];
      }
      dact.assign(s * f, T{0});
      linear_backward(c.act.data(), s, f, P[sl.w_out].data.data(), d, dffn.data(), dact.data(),
                      grads[sl.w_out].data.data(), grads[sl.b_out].data.data());
      for (std::size_t i = 0; i < s * f; ++i) dact[i] *= gelu_grad(c.pre[i]);
      linear_backward(c.h1.data(), s, d, P[sl.w_in].data.data(), f, dact.data(), tmp.data(),
                      grads[sl.w_in].data.data(), grads[sl.b_in].data.data());
      for (std::size_t i = 0; i < s * d; ++i) dh1[i] += tmp[i];

      layer_norm_backward(c.norm1, s, d, P[sl.attn_gamma].data.data(), dh1.data(), dattn.data(),
                          grads[sl.attn_gamma].data.data(), grads[sl.attn_beta].data.data());
      dx = dattn;  // residual into layer input
      if (!c.attn_drop.empty()) {
        for (std::size_t i = 0; i < s * d; ++i) dattn[i] *= c.attn_drop[i];
      }
      linear_backward(c.ctx.data(), s, d, P[sl.wo].data.data(), d, dattn.data(), dctx.data(),
                      grads[sl.wo].data.data(), grads[sl.bo].data.data());

      dq.assign(s * d, T{0});
      dk.assign(s * d, T{0});
      dv.assign(s * d, T{0});
      for (std::size_t hd = 0; hd < nh; ++hd) {
        const std::size_t off = hd * dh_;
        for (std::size_t i = 0; i < s; ++i) {
          const T* row = c.probs.data() + (hd * s + i) * s;
          const T* drop = c.probs_drop.empty() ? nullptr : c.probs_drop.data() + (hd * s + i) * s;
          const T* dci = dctx.data() + i * d + off;
          T dot{0};
          for (std::size_t j = 0; j < s; ++j) {
            if (row[j] == T{0}) {
              dprow[j] = T{0};
              continue;
            }
            const T* vj = c.v.data() + j * d + off;
            T acc{0};
            for (std::size_t e = 0; e < dh_; ++e) acc += dci[e] * vj[e];
            const T m = drop != nullptr ? drop[j] : T{1};
            dprow[j] = acc * m;
            T* dvj = dv.data() + j * d + off;
            const T w = row[j] * m;
            for (std::size_t e = 0; e < dh_; ++e) dvj[e] += w * dci[e];
            dot += row[j] * dprow[j];
          }
          for (std::size_t j = 0; j < s; ++j) {
            if (row[j] == T{0}) continue;
            const T ds = row[j] * (dprow[j] - dot) * scale;
            const T* kj = c.k.data() + j * d + off;
            const T* qi = c.q.data() + i * d + off;
            T* dqi = dq.data() + i * d + off;
            T* dkj = dk.data() + j * d + off;
            for (std::size_t e = 0; e < dh_; ++e) {
              dqi[e] += ds * kj[e];
              dkj[e] += ds * qi[e];
            }
          }
        }
      }
      linear_backward(c.x.data(), s, d, P[sl.wq].data.data(), d, dq.data(), tmp.data(),
                      grads[sl.wq].data.data(), grads[sl.bq].data.data());
      for (std::size_t i = 0; i < s * d; ++i) dx[i] += tmp[i];
      linear_backward(c.x.data(), s, d, P[sl.wk].data.data(), d, dk.data(), tmp.data(),
                      grads[sl.wk].data.data(), grads[sl.bk].data.data());
      for (std::size_t i = 0; i < s * d; ++i) dx[i] += tmp[i];
      linear_backward(c.x.data(), s, d, P[sl.wv].data.data(), d, dv.data(), tmp.data(),
                      grads[sl.wv].data.data(), grads[sl.bv].data.data());
      for (std::size_t i = 0; i < s * d; ++i) dx[i] += tmp[i];
      dh.swap(dx);
    }

    if (!emb_drop_.empty()) {
      for (std::size_t i = 0; i < s * d; ++i) dh[i] *= emb_drop_[i];
    }
    std::vector<T> dsum(s * d);
    layer_norm_backward(emb_norm_, s, d, P[model_.emb_gamma_slot()].data.data(), dh.data(),
                        dsum.data(), grads[model_.emb_gamma_slot()].data.data(),
                        grads[model_.emb_beta_slot()].data.data());
    T* dtok = grads[model_.token_slot()].data.data();
    T* dpos = grads[model_.position_slot()].data.data();
    T* dseg = grads[model_.segment_slot()].data.data();
    for (std::size_t i = 0; i < s; ++i) {
      const std::size_t id = static_cast<std::size_t>(ids_[i]);
      for (std::size_t j = 0; j < d; ++j) {
        const T g = dsum[i * d + j];
        dtok[id * d + j] += g;
        dpos[i * d + j] += g;
        dseg[j] += g;
      }
    }
  }

 private:
  const Encoder<T>& model_;
  std::size_t s_ = 0;
  std::vector<TokenId> ids_;
  std::vector<std::uint8_t> mask_;
  NormCache<T> emb_norm_;
  std::vector<T> emb_drop_;
  std::vector<LayerCache<T>> caches_;
  std::vector<T> out_;
};

// Row logits = h·W + b.
template <typename T>
void head_logits(const Encoder<T>& model, const T* h, T* logits) {
  const auto& cfg = model.config();
  linear(h, 1, cfg.hidden, model.params()[model.head_weight_slot()].data.data(),
         model.params()[model.head_bias_slot()].data.data(), cfg.vocab_size, logits);
}

// -log softmax(logits)[target]; optionally writes softmax probabilities.
template <typename T>
double nll_of(const T* logits, std::size_t v, TokenId target, T* probs_out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, static_cast<double>(logits[j]));
  double z = 0.0;
  for (std::size_t j = 0; j < v; ++j) z += std::exp(static_cast<double>(logits[j]) - mx);
  if (probs_out != nullptr) {
    for (std::size_t j = 0; j < v; ++j) {
      probs_out[j] = static_cast<T>(std::exp(static_cast<double>(logits[j]) - mx) / z);
    }
  }
  return std::log(z) + mx - static_cast<double>(logits[static_cast<std::size_t>(target)]);
}

template <typename T>
void check_batch(const Encoder<T>& model, const MaskedBatch& batch) {
  if (batch.input_ids.size() != batch.rows * batch.width ||
      batch.labels.size() != batch.rows * batch.width ||
      batch.attention_mask.size() != batch.rows * batch.width) {
    throw InputError("encoder", "batch arrays do not match rows x width");
  }
  for (const TokenId l : batch.labels) {
    if (l != kIgnoreLabel && (l < 0 || static_cast<std::size_t>(l) >= model.config().vocab_size)) {
      throw InputError("encoder", "label id " + std::to_string(l) + " outside vocabulary");
    }
  }
}

}  // namespace detail

template <typename T>
struct ForwardOutput {
  std::size_t rows = 0, width = 0, vocab = 0, hidden = 0;
  std::vector<T> logits;         // rows × width × vocab
  std::vector<T> hidden_states;  // rows × width × hidden

  const T* logits_at(std::size_t r, std::size_t c) const { return &logits[(r * width + c) * vocab]; }
  const T* hidden_at(std::size_t r, std::size_t c) const {
    return &hidden_states[(r * width + c) * hidden];
  }
};

/// Full forward pass (no dropout). Throws InputError for out-of-range ids or
/// over-long rows.
template <typename T>
ForwardOutput<T> forward(const Encoder<T>& model, const MaskedBatch& batch) {
  detail::check_batch(model, batch);
  const auto& cfg = model.config();
  ForwardOutput<T> out;
  out.rows = batch.rows;
  out.width = batch.width;
  out.vocab = cfg.vocab_size;
  out.hidden = cfg.hidden;
  out.logits.resize(batch.rows * batch.width * cfg.vocab_size);
  out.hidden_states.resize(batch.rows * batch.width * cfg.hidden);
  detail::SequenceRunner<T> runner(model);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const std::size_t base = r * batch.width;
    runner.forward(&batch.input_ids[base], &batch.attention_mask[base], batch.width, nullptr);
    std::copy(runner.output().begin(), runner.output().end(),
              out.hidden_states.begin() + static_cast<std::ptrdiff_t>(base * cfg.hidden));
    for (std::size_t c = 0; c < batch.width; ++c) {
      detail::head_logits(model, runner.output().data() + c * cfg.hidden,
                          out.logits.data() + (base + c) * cfg.vocab_size);
    }
  }
  return out;
}

/// Mean negative log-likelihood over labelled positions. `logits` holds one
/// row of `vocab` scores per label. Throws EmptyMask.
template <typename T>
double mlm_loss(std::span<const T> logits, std::span<const TokenId> labels, std::size_t vocab) {
  if (logits.size() != labels.size() * vocab) {
    throw InputError("encoder", "logits and labels shapes disagree");
  }
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kIgnoreLabel) continue;
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= vocab) {
      throw InputError("encoder", "label id outside vocabulary");
    }
    total += detail::nll_of(logits.data() + i * vocab, vocab, labels[i], static_cast<T*>(nullptr));
    ++n;
  }
  if (n == 0) throw EmptyMask("encoder", "no labelled positions");
  return total / static_cast<double>(n);
}

struct NllSum {
  double sum = 0.0;
  std::size_t count = 0;
};

/// Summed NLL and label count without materializing unlabelled logits.
template <typename T>
NllSum masked_nll(const Encoder<T>& model, const MaskedBatch& batch) {
  detail::check_batch(model, batch);
  const auto& cfg = model.config();
  NllSum acc;
  detail::SequenceRunner<T> runner(model);
  std::vector<T> logits(cfg.vocab_size);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const std::size_t base = r * batch.width;
    bool any = false;
    for (std::size_t c = 0; c < batch.width && !any; ++c) any = batch.label(r, c) != kIgnoreLabel;
    if (!any) continue;
    runner.forward(&batch.input_ids[base], &batch.attention_mask[base], batch.width, nullptr);
    for (std::size_t c = 0; c < batch.width; ++c) {
      const TokenId target = batch.label(r, c);
      if (target == kIgnoreLabel) continue;
      detail::head_logits(model, runner.output().data() + c * cfg.hidden, logits.data());
      acc.sum += detail::nll_of(logits.data(), cfg.vocab_size, target, static_cast<T*>(nullptr));
      ++acc.count;
    }
  }
  return acc;
}

template <typename T>
struct LossAndGradients {
  double loss = 0.0;
  std::size_t label_count = 0;
  ParamSet<T> grads;
};

/// Exact gradients of the mean masked NLL. With a non-null `dropout_rng` and
/// config.dropout > 0, dropout masks are drawn from it (training mode).
/// Throws EmptyMask when no position is labelled.
template <typename T>
LossAndGradients<T> compute_gradients(const Encoder<T>& model, const MaskedBatch& batch,
                                      Rng* dropout_rng = nullptr) {
  detail::check_batch(model, batch);
  const std::size_t n = batch.label_count();
  if (n == 0) throw EmptyMask("encoder", "no labelled positions");
  const auto& cfg = model.config();
  const std::size_t d = cfg.hidden, v = cfg.vocab_size;
  if (cfg.dropout <= 0.0) dropout_rng = nullptr;

  LossAndGradients<T> result;
  result.label_count = n;
  result.grads = model.params().zeros_like();
  auto& grads = result.grads;
  const T* head_w = model.params()[model.head_weight_slot()].data.data();
  T* dhead_w = grads[model.head_weight_slot()].data.data();
  T* dhead_b = grads[model.head_bias_slot()].data.data();
  const T inv_n = T{1} / static_cast<T>(n);

  detail::SequenceRunner<T> runner(model);
  std::vector<T> logits(v), probs(v);
  double total = 0.0;
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const std::size_t base = r * batch.width;
    bool any = false;
    for (std::size_t c = 0; c < batch.width && !any; ++c) any = batch.label(r, c) != kIgnoreLabel;
    if (!any && dropout_rng == nullptr) continue;
    runner.forward(&batch.input_ids[base], &batch.attention_mask[base], batch.width, dropout_rng);
    if (!any) continue;
    const auto& h = runner.output();
    std::vector<T> dh(batch.width * d, T{0});
    for (std::size_t c = 0; c < batch.width; ++c) {
      const TokenId target = batch.label(r, c);
      if (target == kIgnoreLabel) continue;
      const T* hc = h.data() + c * d;
      detail::head_logits(model, hc, logits.data());
      total += detail::nll_of(logits.data(), v, target, probs.data());
      probs[static_cast<std::size_t>(target)] -= T{1};
      for (auto& g : probs) g *= inv_n;
      T* dhc = dh.data() + c * d;
      for (std::size_t p = 0; p < d; ++p) {
        const T a = hc[p];
        T* dwp = dhead_w + p * v;
        const T* wp = head_w + p * v;
        T acc{0};
        for (std::size_t j = 0; j < v; ++j) {
          dwp[j] += a * probs[j];
          acc += wp[j] * probs[j];
        }
        dhc[p] = acc;
      }
      for (std::size_t j = 0; j < v; ++j) dhead_b[j] += probs[j];
    }
    runner.backward(std::move(dh), grads);
  }
  result.loss = total / static_cast<double>(n);
  return result;
}

/// Document vector from the final hidden states. Throws EmptyContent for
/// mean pooling over a sequence without content tokens.
template <typename T>
std::vector<T> pool_embeddings(const Encoder<T>& model, const TokenSequence& seq, PoolMode mode) {
  if (seq.ids.empty()) throw EmptyContent("encoder", "empty sequence");
  const std::size_t d = model.config().hidden;
  std::vector<std::uint8_t> mask(seq.ids.size(), 1);
  detail::SequenceRunner<T> runner(model);
  std::vector<T> out(d, T{0});
  if (mode == PoolMode::Mean) {
    // Reject before running the model.
    const bool any = std::any_of(seq.ids.begin(), seq.ids.end(),
                                 [](TokenId id) { return !is_special(id); });
    if (!any) throw EmptyContent("encoder", "no content tokens to average");
  }
  runner.forward(seq.ids.data(), mask.data(), seq.ids.size(), nullptr);
  const auto& h = runner.output();
  if (mode == PoolMode::Cls) {
    std::copy(h.begin(), h.begin() + static_cast<std::ptrdiff_t>(d), out.begin());
    return out;
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    if (is_special(seq.ids[i])) continue;
    for (std::size_t j = 0; j < d; ++j) out[j] += h[i * d + j];
    ++count;
  }
  for (auto& x : out) x /= static_cast<T>(count);
  return out;
}

}  // namespace ehrlm
