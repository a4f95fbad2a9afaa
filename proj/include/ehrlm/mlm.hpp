// SPDX-License-Identifier: Apache-2.0
//
// Masked-language-model corruption and padded batching.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "ehrlm/rng.hpp"
#include "ehrlm/tokenizer.hpp"

namespace ehrlm {

/// Label value at positions that do not contribute to the loss.
inline constexpr TokenId kIgnoreLabel = -1;

struct MaskPolicy {
  double select_prob = 0.15;
  double mask_frac = 0.8;
  double random_frac = 0.1;
  double keep_frac = 0.1;

  /// Throws ConfigError when a fraction is outside [0,1] or the three
  /// replacement fractions do not sum to 1 within 1e-9.
  void validate() const;
};

struct MaskedExample {
  std::vector<TokenId> input_ids;
  std::vector<TokenId> labels;
};

/// Selects each non-special position independently with select_prob, then
/// replaces it by MASK, a uniform non-special id, or leaves it unchanged in
/// the mask/random/keep proportions. Labels hold the original id at selected
/// positions and kIgnoreLabel elsewhere.
MaskedExample mask_sequence(const TokenSequence& seq, const MaskPolicy& policy,
                            std::size_t vocab_size, Rng& rng);

/// Row-major batch of equal-width rows.
struct MaskedBatch {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<TokenId> input_ids;
  std::vector<TokenId> labels;
  std::vector<std::uint8_t> attention_mask;

  TokenId id(std::size_t r, std::size_t c) const { return input_ids[r * width + c]; }
  TokenId label(std::size_t r, std::size_t c) const { return labels[r * width + c]; }
  bool attends(std::size_t r, std::size_t c) const { return attention_mask[r * width + c] != 0; }

  /// Count of labelled (non-ignored) positions.
  std::size_t label_count() const;
};

/// Groups examples into batches of `batch_size` in order; each batch is
/// padded to its longest row (rows longer than max_len are truncated, keeping
/// the final id). The last partial batch is kept.
std::vector<MaskedBatch> make_batches(std::span<const MaskedExample> examples,
                                      std::size_t batch_size, std::size_t max_len);

/// A batch with no corruption, labels all ignored; used for feature extraction.
MaskedBatch plain_batch(std::span<const TokenSequence> sequences);

nlohmann::json to_json(const MaskedBatch& batch);

/// Debug dump, one JSON object per line per batch.
void write_batches(std::span<const MaskedBatch> batches, const std::filesystem::path& path);

}  // namespace ehrlm
