// SPDX-License-Identifier: Apache-2.0
#include "ehrlm/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <unordered_set>

#include "ehrlm/error.hpp"
#include "ehrlm/text.hpp"

namespace ehrlm {

namespace {

std::string merge_key(std::string_view left, std::string_view right) {
  std::string key;
  key.reserve(left.size() + right.size() + 1);
  key.append(left).push_back(' ');
  key.append(right);
  return key;
}

// Applies merge rules by ascending rank until none applies.
std::vector<std::string> apply_merges(std::vector<std::string> symbols, const Vocabulary& vocab) {
  while (symbols.size() > 1) {
    std::size_t best_rank = SIZE_MAX;
    std::size_t best_pos = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      const auto rank = vocab.merge_rank(symbols[i], symbols[i + 1]);
      if (rank && *rank < best_rank) {
        best_rank = *rank;
        best_pos = i;
      }
    }
    if (best_rank == SIZE_MAX) break;
    const std::string left = symbols[best_pos];
    const std::string right = symbols[best_pos + 1];
    std::vector<std::string> next;
    next.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size();) {
      if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
        next.push_back(left + right);
        i += 2;
      } else {
        next.push_back(std::move(symbols[i]));
        ++i;
      }
    }
    symbols = std::move(next);
  }
  return symbols;
}

void word_ids(std::string_view word, const Vocabulary& vocab, std::vector<TokenId>& out) {
  for (const auto& sym : apply_merges(word_symbols(word), vocab)) {
    if (const auto id = vocab.id_of(sym)) {
      out.push_back(*id);
      continue;
    }
    if (sym == kWordBoundary) continue;
    if (sym.rfind(kWordBoundary, 0) == 0) {
      if (const auto marker = vocab.id_of(kWordBoundary)) out.push_back(*marker);
    }
    out.push_back(kUnkId);
  }
}

TokenSequence frame(const std::vector<TokenId>& body, std::size_t max_len) {
  if (max_len < 2) throw ConfigError("tokenizer", "max_len must be at least 2");
  TokenSequence seq;
  const std::size_t keep = std::min(body.size(), max_len - 2);
  seq.ids.reserve(keep + 2);
  seq.ids.push_back(kClsId);
  seq.ids.insert(seq.ids.end(), body.begin(), body.begin() + static_cast<std::ptrdiff_t>(keep));
  seq.ids.push_back(kSepId);
  return seq;
}

}  // namespace

Vocabulary::Vocabulary() {
  for (auto s : kSpecialTokens) add(std::string(s));
}

Vocabulary Vocabulary::from_parts(std::vector<std::string> tokens, std::vector<MergeRule> merges) {
  if (tokens.size() < kSpecialTokens.size()) {
    throw VocabError("tokenizer", "vocabulary is missing special tokens");
  }
  for (std::size_t i = 0; i < kSpecialTokens.size(); ++i) {
    if (tokens[i] != kSpecialTokens[i]) {
      throw VocabError("tokenizer", "special token mismatch at id " + std::to_string(i) +
                                        ": expected " + std::string(kSpecialTokens[i]) +
                                        ", found " + tokens[i]);
    }
  }
  Vocabulary v;
  for (std::size_t i = kSpecialTokens.size(); i < tokens.size(); ++i) {
    if (tokens[i].empty()) throw VocabError("tokenizer", "empty token at id " + std::to_string(i));
    if (v.id_of(tokens[i])) throw VocabError("tokenizer", "duplicate token '" + tokens[i] + "'");
    v.add(tokens[i]);
  }
  for (auto& m : merges) v.add_merge(m);
  return v;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw VocabError("tokenizer", "token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::id_of(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::add(const std::string& token) {
  const auto [it, inserted] = ids_.emplace(token, static_cast<TokenId>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

void Vocabulary::add_merge(const MergeRule& rule) {
  if (merge_ranks_.emplace(merge_key(rule.left, rule.right), merges_.size()).second) {
    merges_.push_back(rule);
  }
}

std::optional<std::size_t> Vocabulary::merge_rank(std::string_view left,
                                                  std::string_view right) const {
  const auto it = merge_ranks_.find(merge_key(left, right));
  if (it == merge_ranks_.end()) return std::nullopt;
  return it->second;
}

void Vocabulary::save(const std::filesystem::path& vocab_path,
                      const std::filesystem::path& merges_path) const {
  std::ofstream v(vocab_path, std::ios::binary);
  std::ofstream m(merges_path, std::ios::binary);
  if (!v || !m) throw IoError("tokenizer", "cannot write vocabulary files");
  for (const auto& t : tokens_) v << t << '\n';
  for (const auto& r : merges_) m << r.left << ' ' << r.right << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& vocab_path,
                            const std::filesystem::path& merges_path) {
  std::ifstream v(vocab_path);
  if (!v) throw IoError("tokenizer", "cannot open " + vocab_path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(v, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  std::vector<MergeRule> merges;
  std::ifstream m(merges_path);
  if (!m) throw IoError("tokenizer", "cannot open " + merges_path.string());
  while (std::getline(m, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto parts = text::split_whitespace(line);
    if (parts.size() != 2) throw VocabError("tokenizer", "malformed merge line '" + line + "'");
    merges.push_back({parts[0], parts[1]});
  }
  return from_parts(std::move(tokens), std::move(merges));
}

std::vector<std::string> word_symbols(std::string_view word) {
  std::vector<std::string> symbols;
  symbols.emplace_back(kWordBoundary);
  for (auto& c : text::utf8_chars(word)) symbols.push_back(std::move(c));
  return symbols;
}

Vocabulary train_bpe(std::span<const std::string> texts, std::size_t target_size,
                     std::uint64_t /*seed*/) {
  std::map<std::string, long long> word_freq;
  for (const auto& t : texts) {
    for (auto& w : text::split_whitespace(t)) ++word_freq[std::move(w)];
  }
  if (word_freq.empty()) throw EmptyCorpus("tokenizer", "no words to train on");

  // Symbol table shared by all words; ids are local to training.
  std::vector<std::string> sym;
  std::unordered_map<std::string, int> sym_id;
  auto intern = [&](const std::string& s) {
    const auto [it, inserted] = sym_id.emplace(s, static_cast<int>(sym.size()));
    if (inserted) sym.push_back(s);
    return it->second;
  };

  struct Word {
    std::vector<int> syms;
    long long freq;
  };
  std::vector<Word> words;
  std::set<std::string> alphabet;
  for (const auto& [w, f] : word_freq) {
    Word word{{}, f};
    for (const auto& s : word_symbols(w)) {
      alphabet.insert(s);
      word.syms.push_back(intern(s));
    }
    words.push_back(std::move(word));
  }

  Vocabulary vocab;
  if (target_size < vocab.size() + alphabet.size()) {
    throw ConfigError("tokenizer", "target vocabulary size " + std::to_string(target_size) +
                                       " is below specials plus alphabet (" +
                                       std::to_string(vocab.size() + alphabet.size()) + ")");
  }
  for (const auto& a : alphabet) vocab.add(a);

  using Pair = std::pair<int, int>;
  auto key_of = [](Pair p) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(p.first)) << 32) |
           static_cast<std::uint32_t>(p.second);
  };
  std::unordered_map<std::uint64_t, long long> counts;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> where;

  // Frequency descending, then bytewise (left, right) ascending.
  struct Entry {
    long long count;
    Pair pair;
  };
  auto cmp = [&sym](const Entry& a, const Entry& b) {
    if (a.count != b.count) return a.count > b.count;
    const auto& al = sym[static_cast<std::size_t>(a.pair.first)];
    const auto& bl = sym[static_cast<std::size_t>(b.pair.first)];
    if (al != bl) return al < bl;
    return sym[static_cast<std::size_t>(a.pair.second)] <
           sym[static_cast<std::size_t>(b.pair.second)];
  };
  std::set<Entry, decltype(cmp)> queue(cmp);

  for (std::size_t wi = 0; wi < words.size(); ++wi) {
    const auto& w = words[wi];
    for (std::size_t i = 0; i + 1 < w.syms.size(); ++i) {
      const auto k = key_of({w.syms[i], w.syms[i + 1]});
      counts[k] += w.freq;
      auto& list = where[k];
      if (list.empty() || list.back() != wi) list.push_back(wi);
    }
  }
  for (const auto& [k, c] : counts) {
    queue.insert({c, {static_cast<int>(k >> 32), static_cast<int>(k & 0xffffffffu)}});
  }

  while (vocab.size() < target_size && !queue.empty()) {
    const Entry best = *queue.begin();
    const Pair pair = best.pair;
    const std::string merged = sym[static_cast<std::size_t>(pair.first)] +
                               sym[static_cast<std::size_t>(pair.second)];
    const int merged_id = intern(merged);
    vocab.add_merge({sym[static_cast<std::size_t>(pair.first)],
                     sym[static_cast<std::size_t>(pair.second)]});
    vocab.add(merged);

    std::unordered_map<std::uint64_t, long long> delta;
    auto affected = where[key_of(pair)];
    for (const auto wi : affected) {
      auto& w = words[wi];
      bool present = false;
      for (std::size_t i = 0; i + 1 < w.syms.size(); ++i) {
        if (w.syms[i] == pair.first && w.syms[i + 1] == pair.second) {
          present = true;
          break;
        }
      }
      if (!present) continue;
      for (std::size_t i = 0; i + 1 < w.syms.size(); ++i) {
        delta[key_of({w.syms[i], w.syms[i + 1]})] -= w.freq;
      }
      std::vector<int> next;
      next.reserve(w.syms.size());
      for (std::size_t i = 0; i < w.syms.size();) {
        if (i + 1 < w.syms.size() && w.syms[i] == pair.first && w.syms[i + 1] == pair.second) {
          next.push_back(merged_id);
          i += 2;
        } else {
          next.push_back(w.syms[i]);
          ++i;
        }
      }
      w.syms = std::move(next);
      for (std::size_t i = 0; i + 1 < w.syms.size(); ++i) {
        const auto k = key_of({w.syms[i], w.syms[i + 1]});
        delta[k] += w.freq;
        auto& list = where[k];
        if (list.empty() || list.back() != wi) list.push_back(wi);
      }
    }

    for (const auto& [k, d] : delta) {
      if (d == 0) continue;
      const Pair p{static_cast<int>(k >> 32), static_cast<int>(k & 0xffffffffu)};
      auto& c = counts[k];
      if (c > 0) queue.erase(Entry{c, p});
      c += d;
      if (c > 0) queue.insert(Entry{c, p});
    }
  }
  return vocab;
}

Vocabulary merge_vocab(const Vocabulary& base, const Vocabulary& domain) {
  for (std::size_t i = 0; i < kSpecialTokens.size(); ++i) {
    const auto id = static_cast<TokenId>(i);
    if (base.size() <= i || domain.size() <= i || base.token(id) != kSpecialTokens[i] ||
        domain.token(id) != kSpecialTokens[i]) {
      throw VocabError("tokenizer", "special-token convention differs between vocabularies");
    }
  }
  Vocabulary merged = base;
  for (std::size_t i = kSpecialTokens.size(); i < domain.size(); ++i) {
    merged.add(domain.tokens()[i]);
  }
  for (const auto& m : domain.merges()) merged.add_merge(m);
  return merged;
}

TokenSequence encode(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  std::vector<TokenId> body;
  for (const auto& w : text::split_whitespace(text)) {
    word_ids(w, vocab, body);
    if (body.size() + 2 >= max_len) break;
  }
  return frame(body, max_len);
}

TokenSequence CachedEncoder::encode(std::string_view text, std::size_t max_len) {
  std::vector<TokenId> body;
  for (const auto& w : text::split_whitespace(text)) {
    auto it = cache_.find(w);
    if (it == cache_.end()) {
      std::vector<TokenId> ids;
      word_ids(w, *vocab_, ids);
      it = cache_.emplace(w, std::move(ids)).first;
    }
    body.insert(body.end(), it->second.begin(), it->second.end());
    if (body.size() + 2 >= max_len) break;
  }
  return frame(body, max_len);
}

std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (const auto id : ids) {
    const auto& tok = vocab.token(id);
    if (id == kUnkId) {
      out += tok;
      continue;
    }
    if (is_special(id)) continue;
    out += tok;
  }
  std::string spaced;
  spaced.reserve(out.size());
  for (std::size_t i = 0; i < out.size();) {
    if (out.compare(i, kWordBoundary.size(), kWordBoundary) == 0) {
      spaced.push_back(' ');
      i += kWordBoundary.size();
    } else {
      spaced.push_back(out[i++]);
    }
  }
  return text::normalize_whitespace(spaced);
}

}  // namespace ehrlm
