// SPDX-License-Identifier: Apache-2.0
//
// Byte-pair-encoding vocabulary induction, vocabulary union with id
// preservation, and encode/decode.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ehrlm {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kClsId = 2;
inline constexpr TokenId kSepId = 3;
inline constexpr TokenId kMaskId = 4;
inline constexpr TokenId kNumSpecials = 5;

inline constexpr std::array<std::string_view, kNumSpecials> kSpecialTokens = {
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

/// Marks the start of a word (U+2581). Every word is pre-tokenized as the
/// marker followed by its characters, so decoding can restore spaces.
inline constexpr std::string_view kWordBoundary = "\xE2\x96\x81";

constexpr bool is_special(TokenId id) { return id >= 0 && id < kNumSpecials; }

struct MergeRule {
  std::string left;
  std::string right;

  bool operator==(const MergeRule&) const = default;
};

/// Ordered token list with the five specials at ids 0-4 and the merge rules
/// that produced the subword tokens, in application order.
class Vocabulary {
 public:
  /// Specials only.
  Vocabulary();

  /// Validates the special prefix and uniqueness; throws VocabError.
  static Vocabulary from_parts(std::vector<std::string> tokens, std::vector<MergeRule> merges);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<MergeRule>& merges() const { return merges_; }

  const std::string& token(TokenId id) const;
  std::optional<TokenId> id_of(std::string_view token) const;

  /// Appends `token` unless present; returns its id.
  TokenId add(const std::string& token);
  /// Appends a merge rule unless already recorded.
  void add_merge(const MergeRule& rule);
  /// Rank of (left, right) in the merge list.
  std::optional<std::size_t> merge_rank(std::string_view left, std::string_view right) const;

  /// Vocabulary file: one token per line, ids in line order. Merges file:
  /// "left right" per line.
  void save(const std::filesystem::path& vocab_path,
            const std::filesystem::path& merges_path) const;
  static Vocabulary load(const std::filesystem::path& vocab_path,
                         const std::filesystem::path& merges_path);

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_ && merges_ == other.merges_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  std::vector<MergeRule> merges_;
  std::unordered_map<std::string, std::size_t> merge_ranks_;
};

/// Symbols of one pre-tokenized word: the boundary marker then each code point.
std::vector<std::string> word_symbols(std::string_view word);

/// Trains a BPE vocabulary on whitespace-split `texts`. The base alphabet is
/// every observed code point plus the boundary marker, sorted bytewise.
/// Merges pick the most frequent adjacent pair; ties go to the
/// lexicographically smallest (left, right). Stops at `target_size` tokens or
/// when no pair remains. `seed` is accepted for interface stability; training
/// is fully deterministic. Throws EmptyCorpus, or ConfigError when
/// target_size is below the specials plus alphabet.
Vocabulary train_bpe(std::span<const std::string> texts, std::size_t target_size,
                     std::uint64_t seed = 0);

/// V_e = V_o followed by the domain tokens absent from V_o, in domain id
/// order. Base ids are unchanged. Merge rules are concatenated the same way.
Vocabulary merge_vocab(const Vocabulary& base, const Vocabulary& domain);

struct TokenSequence {
  std::vector<TokenId> ids;

  std::size_t length() const { return ids.size(); }
  bool operator==(const TokenSequence&) const = default;
};

/// [CLS] subwords... [SEP], truncated so the result has at most max_len ids
/// and SEP stays last. Symbols missing from the vocabulary map to UNK; a
/// lone boundary marker with no vocabulary entry is dropped.
TokenSequence encode(std::string_view text, const Vocabulary& vocab, std::size_t max_len);

/// Inverse of encode up to whitespace normalization. Specials other than UNK
/// are dropped; UNK renders as "[UNK]". Throws VocabError on an id outside
/// the vocabulary.
std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab);

/// Memoizes per-word segmentation; not thread-safe. Produces exactly the ids
/// of encode().
class CachedEncoder {
 public:
  explicit CachedEncoder(const Vocabulary& vocab) : vocab_(&vocab) {}
  TokenSequence encode(std::string_view text, std::size_t max_len);

 private:
  const Vocabulary* vocab_;
  std::unordered_map<std::string, std::vector<TokenId>> cache_;
};

}  // namespace ehrlm
