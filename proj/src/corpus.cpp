// SPDX-License-Identifier: Apache-2.0
#include "ehrlm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ehrlm/error.hpp"
#include "ehrlm/rng.hpp"
#include "ehrlm/text.hpp"

namespace ehrlm {

namespace {
bool is_ascii_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (u >= 33 && u <= 47) || (u >= 58 && u <= 64) || (u >= 91 && u <= 96) ||
         (u >= 123 && u <= 126);
}
}  // namespace

std::vector<const SerializedDocument*> CorpusStore::select(CorpusSplit split) const {
  std::vector<const SerializedDocument*> out;
  for (const auto& d : documents) {
    const auto it = split_tags.find(d.doc_id);
    if (it != split_tags.end() && it->second == split) out.push_back(&d);
  }
  return out;
}

CorpusStore mix_corpus(const std::vector<SerializedDocument>& sci_docs,
                       const std::vector<SerializedDocument>& ehr_docs, double heldout_fraction,
                       std::uint64_t seed) {
  if (sci_docs.empty() && ehr_docs.empty()) {
    throw EmptyCorpus("corpus", "no scientific or EHR documents");
  }
  if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0)) {
    throw ConfigError("corpus", "heldout_fraction must lie in [0, 1)");
  }
  CorpusStore store;
  store.documents.reserve(sci_docs.size() + ehr_docs.size());
  store.documents.insert(store.documents.end(), sci_docs.begin(), sci_docs.end());
  store.documents.insert(store.documents.end(), ehr_docs.begin(), ehr_docs.end());

  Rng rng(seed);
  std::size_t ehr_count = 0;
  for (const auto& d : store.documents) {
    const auto tag = rng.uniform() < heldout_fraction ? CorpusSplit::Heldout : CorpusSplit::Train;
    if (!store.split_tags.emplace(d.doc_id, tag).second) {
      throw DuplicateId("corpus", "duplicate doc_id '" + d.doc_id + "'");
    }
    if (d.source == DocSource::Ehr) ++ehr_count;
  }
  store.mix_ratio =
      static_cast<double>(ehr_count) / static_cast<double>(store.documents.size());
  return store;
}

void write_corpus(const CorpusStore& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("corpus", "cannot write " + path.string());
  for (const auto& d : corpus.documents) {
    auto j = to_json(d);
    j["split"] = corpus.split_tags.at(d.doc_id) == CorpusSplit::Heldout ? "heldout" : "train";
    out << j.dump() << '\n';
  }
}

CorpusStore read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("corpus", "cannot open " + path.string());
  CorpusStore store;
  std::string line;
  std::size_t ehr_count = 0;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("corpus", std::string("invalid JSON line: ") + e.what());
    }
    auto doc = document_from_json(j);
    const auto split = j.value("split", std::string("train"));
    const auto tag = split == "heldout" ? CorpusSplit::Heldout : CorpusSplit::Train;
    if (!store.split_tags.emplace(doc.doc_id, tag).second) {
      throw DuplicateId("corpus", "duplicate doc_id '" + doc.doc_id + "'");
    }
    if (doc.source == DocSource::Ehr) ++ehr_count;
    store.documents.push_back(std::move(doc));
  }
  if (!store.documents.empty()) {
    store.mix_ratio =
        static_cast<double>(ehr_count) / static_cast<double>(store.documents.size());
  }
  return store;
}

std::set<std::string> token_types(const std::vector<SerializedDocument>& docs) {
  std::set<std::string> types;
  for (const auto& d : docs) {
    for (auto& word : text::split_whitespace(text::to_lower(d.text))) {
      std::size_t b = 0;
      std::size_t e = word.size();
      while (b < e && is_ascii_punct(word[b])) ++b;
      while (e > b && is_ascii_punct(word[e - 1])) --e;
      if (e > b) types.insert(word.substr(b, e - b));
    }
  }
  return types;
}

OverlapStats overlap_of(const std::set<std::string>& a, const std::set<std::string>& b) {
  OverlapStats s;
  s.size_a = a.size();
  s.size_b = b.size();
  std::size_t inter = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) ++ia;
    else if (*ib < *ia) ++ib;
    else {
      ++inter;
      ++ia;
      ++ib;
    }
  }
  s.size_intersection = inter;
  s.size_union = s.size_a + s.size_b - inter;
  if (s.size_union > 0) {
    s.jaccard = static_cast<double>(inter) / static_cast<double>(s.size_union);
    s.eta = static_cast<double>(s.size_union) / static_cast<double>(s.size_a + s.size_b);
  }
  return s;
}

OverlapStats corpus_overlap(const std::vector<SerializedDocument>& docs_a,
                            const std::vector<SerializedDocument>& docs_b) {
  const auto a = token_types(docs_a);
  const auto b = token_types(docs_b);
  if (a.empty() || b.empty()) throw EmptyCorpus("corpus", "overlap needs two non-empty corpora");
  return overlap_of(a, b);
}

nlohmann::json to_json(const OverlapStats& s) {
  return {{"jaccard", s.jaccard},
          {"eta", s.eta},
          {"size_a", s.size_a},
          {"size_b", s.size_b},
          {"size_union", s.size_union},
          {"size_intersection", s.size_intersection}};
}

}  // namespace ehrlm
