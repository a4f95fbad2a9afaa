// SPDX-License-Identifier: Apache-2.0
#include "ehrlm/mlm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ehrlm/error.hpp"

namespace ehrlm {

void MaskPolicy::validate() const {
  for (double f : {select_prob, mask_frac, random_frac, keep_frac}) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("mlm", "mask fractions must lie in [0, 1]");
  }
  if (std::abs(mask_frac + random_frac + keep_frac - 1.0) > 1e-9) {
    throw ConfigError("mlm", "mask/random/keep fractions must sum to 1");
  }
}

MaskedExample mask_sequence(const TokenSequence& seq, const MaskPolicy& policy,
                            std::size_t vocab_size, Rng& rng) {
  MaskedExample ex;
  ex.input_ids = seq.ids;
  ex.labels.assign(seq.ids.size(), kIgnoreLabel);
  const auto regular = vocab_size > static_cast<std::size_t>(kNumSpecials)
                           ? vocab_size - static_cast<std::size_t>(kNumSpecials)
                           : 0;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const TokenId original = seq.ids[i];
    if (is_special(original)) continue;
    if (!rng.bernoulli(policy.select_prob)) continue;
    ex.labels[i] = original;
    const double u = rng.uniform();
    if (u < policy.mask_frac) {
      ex.input_ids[i] = kMaskId;
    } else if (u < policy.mask_frac + policy.random_frac && regular > 0) {
      ex.input_ids[i] = kNumSpecials + static_cast<TokenId>(rng.below(regular));
    }
  }
  return ex;
}

std::size_t MaskedBatch::label_count() const {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](TokenId l) { return l != kIgnoreLabel; }));
}

std::vector<MaskedBatch> make_batches(std::span<const MaskedExample> examples,
                                      std::size_t batch_size, std::size_t max_len) {
  if (batch_size == 0) throw ConfigError("mlm", "batch_size must be at least 1");
  if (max_len < 2) throw ConfigError("mlm", "max_len must be at least 2");
  std::vector<MaskedBatch> batches;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t end = std::min(examples.size(), start + batch_size);
    MaskedBatch b;
    b.rows = end - start;
    for (std::size_t i = start; i < end; ++i) {
      b.width = std::max(b.width, std::min(examples[i].input_ids.size(), max_len));
    }
    b.input_ids.assign(b.rows * b.width, kPadId);
    b.labels.assign(b.rows * b.width, kIgnoreLabel);
    b.attention_mask.assign(b.rows * b.width, 0);
    for (std::size_t r = 0; r < b.rows; ++r) {
      const auto& ex = examples[start + r];
      const std::size_t n = std::min(ex.input_ids.size(), max_len);
      for (std::size_t c = 0; c < n; ++c) {
        // Truncation keeps the original final id (SEP) in the last slot.
        const std::size_t src = (c + 1 == n && n < ex.input_ids.size()) ? ex.input_ids.size() - 1 : c;
        b.input_ids[r * b.width + c] = ex.input_ids[src];
        b.labels[r * b.width + c] = ex.labels[src];
        b.attention_mask[r * b.width + c] = 1;
      }
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

MaskedBatch plain_batch(std::span<const TokenSequence> sequences) {
  MaskedBatch b;
  b.rows = sequences.size();
  for (const auto& s : sequences) b.width = std::max(b.width, s.ids.size());
  b.input_ids.assign(b.rows * b.width, kPadId);
  b.labels.assign(b.rows * b.width, kIgnoreLabel);
  b.attention_mask.assign(b.rows * b.width, 0);
  for (std::size_t r = 0; r < b.rows; ++r) {
    for (std::size_t c = 0; c < sequences[r].ids.size(); ++c) {
      b.input_ids[r * b.width + c] = sequences[r].ids[c];
      b.attention_mask[r * b.width + c] = 1;
    }
  }
  return b;
}

nlohmann::json to_json(const MaskedBatch& batch) {
  auto matrix = [&](auto const& flat) {
    nlohmann::json m = nlohmann::json::array();
    for (std::size_t r = 0; r < batch.rows; ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t c = 0; c < batch.width; ++c) row.push_back(flat[r * batch.width + c]);
      m.push_back(std::move(row));
    }
    return m;
  };
  return {{"input_ids", matrix(batch.input_ids)},
          {"labels", matrix(batch.labels)},
          {"attention_mask", matrix(batch.attention_mask)}};
}

void write_batches(std::span<const MaskedBatch> batches, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("mlm", "cannot write " + path.string());
  for (const auto& b : batches) out << to_json(b).dump() << '\n';
}

}  // namespace ehrlm
