// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ehrlm/serializer.hpp"

namespace ehrlm {

enum class CorpusSplit : std::uint8_t { Train, Heldout };

/// Mixed pretraining corpus: scientific-style and serialized-EHR documents,
/// each tagged train or heldout.
struct CorpusStore {
  std::vector<SerializedDocument> documents;
  std::map<std::string, CorpusSplit> split_tags;
  /// Fraction of documents whose source is ehr.
  double mix_ratio = 0.0;

  std::vector<const SerializedDocument*> select(CorpusSplit split) const;
};

/// Concatenates sci then ehr documents; each document is independently
/// heldout with probability `heldout_fraction` under Rng(seed).
/// Throws EmptyCorpus (both inputs empty), DuplicateId, or ConfigError.
CorpusStore mix_corpus(const std::vector<SerializedDocument>& sci_docs,
                       const std::vector<SerializedDocument>& ehr_docs, double heldout_fraction,
                       std::uint64_t seed);

void write_corpus(const CorpusStore& corpus, const std::filesystem::path& path);
CorpusStore read_corpus(const std::filesystem::path& path);

/// Coverage statistics between two corpora's token-type sets:
/// jaccard = |A∩B| / |A∪B| and eta = |A∪B| / (|A| + |B|).
struct OverlapStats {
  double jaccard = 0.0;
  double eta = 0.0;
  std::size_t size_a = 0;
  std::size_t size_b = 0;
  std::size_t size_union = 0;
  std::size_t size_intersection = 0;
};

/// Lowercased whitespace tokens with ASCII punctuation stripped from both
/// edges; tokens that become empty are dropped.
std::set<std::string> token_types(const std::vector<SerializedDocument>& docs);

OverlapStats overlap_of(const std::set<std::string>& a, const std::set<std::string>& b);

/// Throws EmptyCorpus if either side has no token types.
OverlapStats corpus_overlap(const std::vector<SerializedDocument>& docs_a,
                            const std::vector<SerializedDocument>& docs_b);

nlohmann::json to_json(const OverlapStats& stats);

}  // namespace ehrlm
