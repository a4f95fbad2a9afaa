// SPDX-License-Identifier: Apache-2.0
//
// Deterministic templating of patient records into one-paragraph text.
#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ehrlm/ingest.hpp"

namespace ehrlm {

enum class DocSource : std::uint8_t { Sci, Ehr };
std::string_view doc_source_name(DocSource s);

struct SerializedDocument {
  std::string doc_id;
  DocSource source = DocSource::Ehr;
  std::string text;
  std::optional<std::string> patient_id;

  bool operator==(const SerializedDocument&) const = default;
};

/// One clause family. Each item is rendered independently and dropped when
/// any of its {placeholders} has no value; the clause is dropped when no
/// placeholder-bearing item survives.
struct ClauseTemplate {
  std::string label;
  std::vector<std::string> items;
  std::string separator = ", ";
  /// Consecutive events of this kind are merged into a single clause.
  bool coalesce = false;
};

struct TemplateSet {
  std::string version;
  ClauseTemplate demographic;
  std::array<ClauseTemplate, kEventKinds.size()> clauses;

  const ClauseTemplate& clause(EventKind kind) const {
    return clauses[static_cast<std::size_t>(kind)];
  }

  /// The built-in template family "T1".
  static TemplateSet canonical();

  /// Overrides clauses from a JSON object keyed by "demographic" or an event
  /// kind name. A value is either a template string ("Label: item, item.")
  /// or an object {label, items, separator, coalesce}. Unspecified kinds keep
  /// the canonical template.
  static TemplateSet from_json(const nlohmann::json& j);
  static TemplateSet load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  /// Throws TemplateError on unknown placeholders or unbalanced braces.
  void validate() const;
};

SerializedDocument serialize_patient(const PatientRecord& record, const TemplateSet& templates);

/// One document per patient, ordered by patient_id.
std::vector<SerializedDocument> serialize_cohort(const EhrDataset& dataset,
                                                 const TemplateSet& templates);

void write_jsonl(const std::vector<SerializedDocument>& docs, const std::filesystem::path& path);
std::vector<SerializedDocument> read_jsonl(const std::filesystem::path& path);

nlohmann::json to_json(const SerializedDocument& doc);
SerializedDocument document_from_json(const nlohmann::json& j);

}  // namespace ehrlm
