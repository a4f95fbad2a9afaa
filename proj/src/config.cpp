// SPDX-License-Identifier: Apache-2.0
#include "ehrlm/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>

#include "ehrlm/error.hpp"
#include "ehrlm/text.hpp"

namespace ehrlm {
namespace {

enum class Kind { UInt, Double, Bool, String, Path };

struct Entry {
  std::string key;
  Kind kind;
  std::function<void(PipelineConfig&, const nlohmann::json&)> set;
  std::function<nlohmann::json(const PipelineConfig&)> get;
};

template <typename Field>
Entry uint_entry(std::string key, Field field) {
  return {std::move(key), Kind::UInt,
          [field](PipelineConfig& c, const nlohmann::json& v) { field(c) = v.get<std::size_t>(); },
          [field](const PipelineConfig& c) { return nlohmann::json(field(const_cast<PipelineConfig&>(c))); }};
}

template <typename Field>
Entry int_entry(std::string key, Field field) {
  return {std::move(key), Kind::UInt,
          [field](PipelineConfig& c, const nlohmann::json& v) { field(c) = v.get<int>(); },
          [field](const PipelineConfig& c) { return nlohmann::json(field(const_cast<PipelineConfig&>(c))); }};
}

template <typename Field>
Entry double_entry(std::string key, Field field) {
  return {std::move(key), Kind::Double,
          [field](PipelineConfig& c, const nlohmann::json& v) { field(c) = v.get<double>(); },
          [field](const PipelineConfig& c) { return nlohmann::json(field(const_cast<PipelineConfig&>(c))); }};
}

template <typename Field>
Entry bool_entry(std::string key, Field field) {
  return {std::move(key), Kind::Bool,
          [field](PipelineConfig& c, const nlohmann::json& v) { field(c) = v.get<bool>(); },
          [field](const PipelineConfig& c) { return nlohmann::json(field(const_cast<PipelineConfig&>(c))); }};
}

template <typename Field>
Entry string_entry(std::string key, Field field) {
  return {std::move(key), Kind::String,
          [field](PipelineConfig& c, const nlohmann::json& v) { field(c) = v.get<std::string>(); },
          [field](const PipelineConfig& c) { return nlohmann::json(field(const_cast<PipelineConfig&>(c))); }};
}

template <typename Field>
Entry path_entry(std::string key, Field field) {
  return {std::move(key), Kind::Path,
          [field](PipelineConfig& c, const nlohmann::json& v) { field(c) = v.get<std::string>(); },
          [field](const PipelineConfig& c) {
            return nlohmann::json(field(const_cast<PipelineConfig&>(c)).generic_string());
          }};
}

// Enumerations travel as strings and are parsed by `parse`.
template <typename Field, typename Parse, typename Name>
Entry enum_entry(std::string key, Field field, Parse parse, Name name) {
  const std::string k = key;
  return {std::move(key), Kind::String,
          [field, parse, k](PipelineConfig& c, const nlohmann::json& v) {
            const auto s = v.get<std::string>();
            const auto parsed = parse(s);
            if (!parsed) throw ConfigError("config", "key '" + k + "': unrecognized value '" + s + "'");
            field(c) = *parsed;
          },
          [field, name](const PipelineConfig& c) { return nlohmann::json(name(field(const_cast<PipelineConfig&>(c)))); }};
}

std::optional<PoolMode> pooling_from(const std::string& s) {
  const auto n = text::to_lower(s);
  if (n == "cls") return PoolMode::Cls;
  if (n == "mean") return PoolMode::Mean;
  return std::nullopt;
}

#define FIELD(expr) [](PipelineConfig& c) -> auto& { return c.expr; }

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    e.push_back({"seed", Kind::UInt, [](PipelineConfig& c, const nlohmann::json& v) { c.seed = v.get<std::uint64_t>(); },
                 [](const PipelineConfig& c) { return nlohmann::json(c.seed); }});
    e.push_back(path_entry("ingest.data_dir", FIELD(ingest.data_dir)));
    e.push_back(bool_entry("ingest.require_culture_positive", FIELD(ingest.criteria.require_culture_positive)));
    e.push_back(uint_entry("ingest.min_tested_antibiotics", FIELD(ingest.criteria.min_tested_antibiotics)));
    e.push_back(double_entry("ingest.split_train", FIELD(ingest.ratios.train)));
    e.push_back(double_entry("ingest.split_validation", FIELD(ingest.ratios.validation)));
    e.push_back(double_entry("ingest.split_test", FIELD(ingest.ratios.test)));
    e.push_back(path_entry("serialize.template_file", FIELD(serialize.template_file)));
    e.push_back(path_entry("corpus.sci_docs", FIELD(corpus.sci_docs)));
    e.push_back(double_entry("corpus.heldout_fraction", FIELD(corpus.heldout_fraction)));
    e.push_back(uint_entry("tokenizer.base_vocab_size", FIELD(tokenizer.base_vocab_size)));
    e.push_back(uint_entry("tokenizer.domain_vocab_size", FIELD(tokenizer.domain_vocab_size)));
    e.push_back(uint_entry("model.max_len", FIELD(model.max_len)));
    e.push_back(uint_entry("model.layers", FIELD(model.layers)));
    e.push_back(uint_entry("model.hidden", FIELD(model.hidden)));
    e.push_back(uint_entry("model.heads", FIELD(model.heads)));
    e.push_back(uint_entry("model.ffn_dim", FIELD(model.ffn_dim)));
    e.push_back(double_entry("model.dropout", FIELD(model.dropout)));
    e.push_back(double_entry("model.init_std", FIELD(model.init_std)));
    e.push_back(double_entry("train.lr0", FIELD(train.lr0)));
    e.push_back(uint_entry("train.batch_size", FIELD(train.batch_size)));
    e.push_back(uint_entry("train.max_len", FIELD(train.max_len)));
    e.push_back(uint_entry("train.max_epochs", FIELD(train.max_epochs)));
    e.push_back(double_entry("train.clip_norm", FIELD(train.clip_norm)));
    e.push_back(uint_entry("train.val_every", FIELD(train.val_every)));
    e.push_back(uint_entry("train.patience", FIELD(train.patience)));
    e.push_back(double_entry("train.beta1", FIELD(train.adamw.beta1)));
    e.push_back(double_entry("train.beta2", FIELD(train.adamw.beta2)));
    e.push_back(double_entry("train.eps", FIELD(train.adamw.eps)));
    e.push_back(double_entry("train.weight_decay", FIELD(train.adamw.weight_decay)));
    e.push_back(double_entry("train.mask_prob", FIELD(train.mask.select_prob)));
    e.push_back(double_entry("train.mask_frac", FIELD(train.mask.mask_frac)));
    e.push_back(double_entry("train.random_frac", FIELD(train.mask.random_frac)));
    e.push_back(double_entry("train.keep_frac", FIELD(train.mask.keep_frac)));
    e.push_back(uint_entry("train.eval_seed", FIELD(train.eval_seed)));
    e.push_back(enum_entry("downstream.pooling", FIELD(downstream.pooling), pooling_from, pool_mode_name));
    e.push_back(uint_entry("downstream.max_windows", FIELD(downstream.max_windows)));
    e.push_back(uint_entry("downstream.rounds", FIELD(downstream.gbdt.rounds)));
    e.push_back(uint_entry("downstream.max_depth", FIELD(downstream.gbdt.max_depth)));
    e.push_back(double_entry("downstream.shrinkage", FIELD(downstream.gbdt.shrinkage)));
    e.push_back(double_entry("downstream.lambda", FIELD(downstream.gbdt.lambda)));
    e.push_back(uint_entry("downstream.min_samples_leaf", FIELD(downstream.gbdt.min_samples_leaf)));
    e.push_back(double_entry("downstream.prior_clamp", FIELD(downstream.gbdt.prior_clamp)));
    e.push_back(uint_entry("eval.n_boot", FIELD(eval.n_boot)));
    e.push_back(double_entry("eval.f1_threshold", FIELD(eval.f1_threshold)));
    e.push_back(enum_entry("eval.tie_policy", FIELD(eval.tie_policy), parse_tie_policy, tie_policy_name));
    e.push_back(path_entry("eval.scores", FIELD(eval.scores)));
    e.push_back(string_entry("eval.model_name", FIELD(eval.model_name)));
    e.push_back(string_entry("probe.endpoint", FIELD(probe.endpoint)));
    e.push_back(string_entry("probe.model", FIELD(probe.model)));
    e.push_back(string_entry("probe.api_key_env", FIELD(probe.api_key_env)));
    e.push_back(double_entry("probe.timeout_s", FIELD(probe.timeout_s)));
    e.push_back(int_entry("probe.max_retries", FIELD(probe.max_retries)));
    e.push_back(double_entry("probe.backoff_s", FIELD(probe.backoff_s)));
    e.push_back(string_entry("probe.template_id", FIELD(probe.template_id)));
    e.push_back(uint_entry("probe.samples", FIELD(probe.samples)));
    return e;
  }();
  return entries;
}

#undef FIELD

const Entry& find_entry(const std::string& key) {
  for (const auto& e : registry()) {
    if (e.key == key) return e;
  }
  throw ConfigError("config", "unknown key '" + key + "'");
}

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::UInt: return "a non-negative integer";
    case Kind::Double: return "a number";
    case Kind::Bool: return "true or false";
    case Kind::String:
    case Kind::Path: return "a string";
  }
  return "?";
}

bool matches(Kind k, const nlohmann::json& v) {
  switch (k) {
    case Kind::UInt: return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    case Kind::Double: return v.is_number();
    case Kind::Bool: return v.is_boolean();
    case Kind::String:
    case Kind::Path: return v.is_string();
  }
  return false;
}

// Text form of an override, converted by the key's type.
nlohmann::json from_text(const Entry& e, const std::string& raw) {
  const auto s = std::string(text::trim(raw));
  auto mismatch = [&] {
    return ConfigError("config", "key '" + e.key + "': expected " + kind_name(e.kind) + ", got '" + s + "'");
  };
  switch (e.kind) {
    case Kind::UInt: {
      std::uint64_t v = 0;
      const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) throw mismatch();
      return v;
    }
    case Kind::Double: {
      const auto v = text::parse_number(s);
      if (!v) throw mismatch();
      return *v;
    }
    case Kind::Bool: {
      const auto l = text::to_lower(s);
      if (l == "true" || l == "1" || l == "yes") return true;
      if (l == "false" || l == "0" || l == "no") return false;
      throw mismatch();
    }
    case Kind::String:
    case Kind::Path: return s;
  }
  return nullptr;
}

// Nested objects and dotted keys both flatten to dotted paths.
void flatten_into(const nlohmann::json& j, const std::string& prefix,
                  std::vector<std::pair<std::string, nlohmann::json>>& out) {
  for (const auto& [k, v] : j.items()) {
    const auto key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) flatten_into(v, key, out);
    else out.emplace_back(key, v);
  }
}

}  // namespace

std::string profile_name(Profile p) { return p == Profile::Full ? "full" : "desk"; }

std::optional<Profile> parse_profile(std::string_view name) {
  const auto n = text::to_lower(name);
  if (n == "full") return Profile::Full;
  if (n == "desk") return Profile::Desk;
  return std::nullopt;
}

PipelineConfig profile_defaults(Profile profile) {
  PipelineConfig c;
  c.profile = profile;
  c.probe.endpoint.clear();  // opt-in: probing needs a live endpoint or a transcript
  if (profile == Profile::Full) {
    c.tokenizer = {32000, 10000};
    c.model.max_len = 512;
    c.model.layers = 12;
    c.model.hidden = 768;
    c.model.heads = 12;
    c.model.ffn_dim = 3072;
    c.train = TrainConfig{};  // lr 2e-5, batch 64, 512 tokens, 100 epochs, clip 1, every 10k, patience 5
    return c;
  }
  c.ingest.data_dir = "data/desk";
  c.corpus.sci_docs = "data/desk/sci_docs.jsonl";
  c.tokenizer = {120, 120};
  c.model.max_len = 128;
  c.model.layers = 2;
  c.model.hidden = 64;
  c.model.heads = 4;
  c.model.ffn_dim = 256;
  c.train.lr0 = 2e-3;
  c.train.batch_size = 32;
  c.train.max_len = 128;
  c.train.max_epochs = 6;
  c.train.val_every = 200;
  c.downstream.pooling = PoolMode::Mean;
  c.downstream.max_windows = 0;
  return c;
}

void PipelineConfig::validate() const {
  auto wrap = [](const std::string& key, const std::function<void()>& check) {
    try {
      check();
    } catch (const ConfigError& e) {
      throw ConfigError("config", key + ": " + e.what());
    }
  };
  if (ingest.data_dir.empty()) throw ConfigError("config", "ingest.data_dir must be set");
  for (double r : {ingest.ratios.train, ingest.ratios.validation, ingest.ratios.test}) {
    if (!(r >= 0.0)) throw ConfigError("config", "ingest.split_*: ratios must be non-negative");
  }
  if (std::abs(ingest.ratios.train + ingest.ratios.validation + ingest.ratios.test - 1.0) > 1e-9) {
    throw ConfigError("config", "ingest.split_*: ratios must sum to 1");
  }
  if (!(corpus.heldout_fraction > 0.0 && corpus.heldout_fraction < 1.0)) {
    throw ConfigError("config", "corpus.heldout_fraction must lie in (0, 1)");
  }
  if (tokenizer.base_vocab_size == 0 || tokenizer.domain_vocab_size == 0) {
    throw ConfigError("config", "tokenizer sizes must be positive");
  }
  wrap("model", [&] {
    ModelConfig m = model;
    m.vocab_size = std::max<std::size_t>(m.vocab_size, kNumSpecials + 1);
    m.validate();
  });
  wrap("train", [&] { train.validate(); });
  wrap("downstream", [&] { downstream.gbdt.validate(); });
  if (eval.n_boot == 0) throw ConfigError("config", "eval.n_boot must be at least 1");
  if (!(eval.f1_threshold >= 0.0 && eval.f1_threshold <= 1.0)) {
    throw ConfigError("config", "eval.f1_threshold must lie in [0, 1]");
  }
  wrap("probe", [&] { probe.validate(); });
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : registry()) keys.push_back(e.key);
  return keys;
}

void set_config_value(PipelineConfig& cfg, const std::string& key, const nlohmann::json& value) {
  const auto& e = find_entry(key);
  if (!matches(e.kind, value)) {
    throw ConfigError("config", "key '" + key + "': expected " + kind_name(e.kind) + ", got " + value.dump());
  }
  e.set(cfg, value);
}

void set_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  const auto& e = find_entry(key);
  e.set(cfg, from_text(e, value));
}

PipelineConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                            std::optional<Profile> profile) {
  std::vector<std::pair<std::string, nlohmann::json>> file_values;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open config file " + path.string());
    const std::string body{std::istreambuf_iterator<char>(in), {}};
    if (!text::trim(body).empty()) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(body, nullptr, true, true);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config", path.string() + ": " + e.what());
      }
      if (!j.is_object()) throw ConfigError("config", path.string() + ": top level must be an object");
      flatten_into(j, "", file_values);
    }
  }

  Profile chosen = profile.value_or(Profile::Desk);
  for (const auto& [k, v] : file_values) {
    if (k != "profile") continue;
    if (!v.is_string() || !parse_profile(v.get<std::string>())) {
      throw ConfigError("config", "key 'profile': expected \"full\" or \"desk\"");
    }
    if (!profile) chosen = *parse_profile(v.get<std::string>());
  }
  PipelineConfig cfg = profile_defaults(chosen);

  const auto base = path.empty() ? std::filesystem::path() : path.parent_path();
  for (const auto& [k, v] : file_values) {
    if (k == "profile") continue;
    set_config_value(cfg, k, v);
    if (find_entry(k).kind == Kind::Path && !base.empty()) {
      std::filesystem::path p = v.get<std::string>();
      if (!p.empty() && p.is_relative()) set_config_value(cfg, k, nlohmann::json((base / p).generic_string()));
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("config", "override '" + o + "' is not key=value");
    set_config_value(cfg, std::string(text::trim(o.substr(0, eq))), o.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

nlohmann::json to_json(const PipelineConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  j["profile"] = profile_name(cfg.profile);
  for (const auto& e : registry()) j[e.key] = e.get(cfg);
  return j;
}

}  // namespace ehrlm
