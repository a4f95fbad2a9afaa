// SPDX-License-Identifier: Apache-2.0
//
// One configuration for the whole pipeline. Values come from a named profile,
// then a JSON file (nested objects or dotted keys), then key=value overrides.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ehrlm/downstream.hpp"
#include "ehrlm/encoder.hpp"
#include "ehrlm/evalbench.hpp"
#include "ehrlm/ingest.hpp"
#include "ehrlm/llm_probe.hpp"
#include "ehrlm/trainer.hpp"

namespace ehrlm {

enum class Profile { Full, Desk };
std::string profile_name(Profile p);
std::optional<Profile> parse_profile(std::string_view name);

struct PipelineConfig {
  Profile profile = Profile::Desk;
  std::uint64_t seed = 0;

  struct Ingest {
    std::filesystem::path data_dir;
    CohortCriteria criteria;
    SplitRatios ratios;
  } ingest;

  struct Serialize {
    std::filesystem::path template_file;  // empty: built-in template
  } serialize;

  struct Corpus {
    std::filesystem::path sci_docs;
    double heldout_fraction = 0.1;
  } corpus;

  struct Tokenizer {
    std::size_t base_vocab_size = 32000;
    std::size_t domain_vocab_size = 10000;
  } tokenizer;

  ModelConfig model;  // vocab_size and seed are filled in at pretraining
  TrainConfig train;

  struct Downstream {
    PoolMode pooling = PoolMode::Cls;
    std::size_t max_windows = 1;  // windows pooled per document; 0 = all
    GbdtParams gbdt;
  } downstream;

  struct Eval {
    std::size_t n_boot = 1000;
    double f1_threshold = 0.5;
    TiePolicy tie_policy = TiePolicy::ListingOrder;
    std::filesystem::path scores;  // score table for `rank`
    std::string model_name = "SerializedEncoder";
  } eval;

  ProbeConfig probe;

  /// Throws ConfigError naming the offending key.
  void validate() const;
};

PipelineConfig profile_defaults(Profile profile);

/// Every configurable key, dotted, in a fixed order.
std::vector<std::string> config_keys();

/// Sets one dotted key from its text form. Throws ConfigError on an unknown
/// key or a value of the wrong type.
void set_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value);
/// Same, from a JSON scalar.
void set_config_value(PipelineConfig& cfg, const std::string& key, const nlohmann::json& value);

/// Profile defaults (the file's "profile" key, else `profile`), then the file
/// (if non-empty), then "key=value" overrides; validates the result.
/// Relative paths in the file resolve against the file's directory.
PipelineConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                            std::optional<Profile> profile = std::nullopt);

/// Flat {"dotted.key": value} view with every key.
nlohmann::json to_json(const PipelineConfig& cfg);

}  // namespace ehrlm
