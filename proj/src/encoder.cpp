// SPDX-License-Identifier: Apache-2.0
#include "ehrlm/encoder.hpp"

#include "ehrlm/text.hpp"

namespace ehrlm {

void ModelConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(kNumSpecials)) {
    throw ConfigError("encoder", "vocab_size must exceed the special tokens");
  }
  if (max_len < 2) throw ConfigError("encoder", "max_len must be at least 2");
  if (layers < 1) throw ConfigError("encoder", "layers must be at least 1");
  if (hidden == 0 || heads == 0 || ffn_dim == 0) {
    throw ConfigError("encoder", "hidden, heads and ffn_dim must be positive");
  }
  if (hidden % heads != 0) {
    throw ConfigError("encoder", "hidden " + std::to_string(hidden) + " not divisible by heads " +
                                     std::to_string(heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("encoder", "dropout must lie in [0, 1)");
  if (!(init_std > 0.0)) throw ConfigError("encoder", "init_std must be positive");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"max_len", c.max_len}, {"layers", c.layers},
          {"hidden", c.hidden},         {"heads", c.heads},     {"ffn_dim", c.ffn_dim},
          {"dropout", c.dropout},       {"init_std", c.init_std}, {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.init_std = j.at("init_std").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("encoder", std::string("bad model config: ") + e.what());
  }
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.hidden, f = c.ffn_dim, v = c.vocab_size;
  const std::size_t embeddings = (v + c.max_len + kSegments) * d + 2 * d;
  const std::size_t attention = 4 * (d * d + d) + 2 * d;
  const std::size_t ffn = d * f + f + f * d + d + 2 * d;
  const std::size_t head = d * v + v;
  return embeddings + c.layers * (attention + ffn) + head;
}

PoolMode parse_pool_mode(const std::string& name) {
  const auto n = text::to_lower(name);
  if (n == "cls") return PoolMode::Cls;
  if (n == "mean") return PoolMode::Mean;
  throw ConfigError("encoder", "unknown pooling mode '" + name + "' (expected cls or mean)");
}

std::string pool_mode_name(PoolMode mode) { return mode == PoolMode::Cls ? "cls" : "mean"; }

}  // namespace ehrlm
