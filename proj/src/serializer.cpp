// SPDX-License-Identifier: Apache-2.0
#include "ehrlm/serializer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "ehrlm/error.hpp"
#include "ehrlm/text.hpp"

namespace ehrlm {

namespace {

constexpr std::array<FieldSpec, 4> kDemographicFields = {
    {{"patient_id", false}, {"age", true}, {"sex", false}, {"race", false}}};

using Values = std::map<std::string, std::string, std::less<>>;

struct Piece {
  std::string text;
  bool placeholder;
};

std::vector<Piece> parse_item(const std::string& item) {
  std::vector<Piece> pieces;
  std::string literal;
  std::size_t i = 0;
  while (i < item.size()) {
    if (item[i] == '{') {
      const auto close = item.find('}', i);
      if (close == std::string::npos) {
        throw TemplateError("serializer", "unterminated placeholder in '" + item + "'");
      }
      if (!literal.empty()) pieces.push_back({std::move(literal), false});
      literal.clear();
      pieces.push_back({item.substr(i + 1, close - i - 1), true});
      i = close + 1;
    } else if (item[i] == '}') {
      throw TemplateError("serializer", "unbalanced '}' in '" + item + "'");
    } else {
      literal.push_back(item[i++]);
    }
  }
  if (!literal.empty()) pieces.push_back({std::move(literal), false});
  return pieces;
}

// Renders `item`; nullopt when a placeholder is missing. `had_placeholder`
// reports whether the item references any field.
std::optional<std::string> render_item(const std::string& item, const Values& values,
                                       bool& had_placeholder) {
  std::string out;
  had_placeholder = false;
  for (const auto& piece : parse_item(item)) {
    if (!piece.placeholder) {
      out += piece.text;
      continue;
    }
    had_placeholder = true;
    const auto it = values.find(piece.text);
    if (it == values.end() || it->second.empty()) return std::nullopt;
    out += it->second;
  }
  return out;
}

// Body of one clause instance, or nullopt when every placeholder is missing.
std::optional<std::string> render_body(const ClauseTemplate& tpl, const Values& values) {
  std::string body;
  bool any_field = false;
  for (const auto& item : tpl.items) {
    bool had_placeholder = false;
    const auto rendered = render_item(item, values, had_placeholder);
    if (!rendered) continue;
    any_field = any_field || had_placeholder;
    if (!body.empty()) body += tpl.separator;
    body += *rendered;
  }
  if (!any_field) return std::nullopt;
  return body;
}

std::string finish_clause(const ClauseTemplate& tpl, const std::string& body) {
  std::string out = tpl.label.empty() ? body : tpl.label + ": " + body;
  if (out.empty() || out.back() != '.') out.push_back('.');
  return out;
}

std::string clean_value(const std::string& raw, bool numeric) {
  if (numeric) {
    if (const auto v = text::parse_number(raw)) return text::format_decimal1(*v);
  }
  return text::normalize_whitespace(raw);
}

Values event_values(const ClinicalEvent& ev) {
  Values values;
  for (const auto& field : event_schema(ev.kind)) {
    const auto it = ev.payload.find(std::string(field.name));
    if (it == ev.payload.end()) continue;
    auto v = clean_value(it->second, field.numeric);
    if (!v.empty()) values.emplace(std::string(field.name), std::move(v));
  }
  return values;
}

Values demographic_values(const PatientRecord& record) {
  Values values;
  values.emplace("patient_id", text::normalize_whitespace(record.patient_id));
  const auto& d = record.demographics;
  if (d.age) values.emplace("age", text::format_decimal1(*d.age));
  const auto sex = text::to_lower(text::normalize_whitespace(d.sex));
  if (sex == "f") values.emplace("sex", "female");
  else if (sex == "m") values.emplace("sex", "male");
  else if (!sex.empty()) values.emplace("sex", sex);
  const auto race = text::to_lower(text::normalize_whitespace(d.race));
  if (!race.empty()) values.emplace("race", race);
  return values;
}

void check_placeholders(const ClauseTemplate& tpl, std::span<const FieldSpec> schema,
                        std::string_view kind) {
  for (const auto& item : tpl.items) {
    for (const auto& piece : parse_item(item)) {
      if (!piece.placeholder) continue;
      const bool known = std::any_of(schema.begin(), schema.end(), [&](const FieldSpec& f) {
        return f.name == piece.text;
      });
      if (!known) {
        throw TemplateError("serializer", "template '" + std::string(kind) +
                                              "' references unknown field '" + piece.text + "'");
      }
    }
  }
}

// "Label: a, b, c." -> label + items; the demographic sentence splits on
// spaces instead so that each word can be dropped on its own.
ClauseTemplate parse_template_string(const std::string& s, bool demographic, bool coalesce) {
  ClauseTemplate tpl;
  tpl.coalesce = coalesce;
  std::string body = std::string(text::trim(s));
  if (!body.empty() && body.back() == '.') body.pop_back();
  if (demographic) {
    tpl.separator = " ";
    tpl.items = text::split_whitespace(body);
    return tpl;
  }
  const auto colon = body.find(": ");
  const auto brace = body.find('{');
  if (colon != std::string::npos && (brace == std::string::npos || colon < brace)) {
    tpl.label = body.substr(0, colon);
    body = body.substr(colon + 2);
  }
  std::size_t start = 0;
  while (start <= body.size()) {
    const auto comma = body.find(", ", start);
    const auto end = comma == std::string::npos ? body.size() : comma;
    auto item = std::string(text::trim(std::string_view(body).substr(start, end - start)));
    if (!item.empty()) tpl.items.push_back(std::move(item));
    if (comma == std::string::npos) break;
    start = comma + 2;
  }
  return tpl;
}

ClauseTemplate parse_clause_json(const nlohmann::json& j, bool demographic, bool coalesce) {
  if (j.is_string()) return parse_template_string(j.get<std::string>(), demographic, coalesce);
  if (!j.is_object()) throw TemplateError("serializer", "template entry must be string or object");
  ClauseTemplate tpl;
  tpl.separator = demographic ? " " : ", ";
  tpl.coalesce = coalesce;
  for (const auto& [key, value] : j.items()) {
    if (key == "label") tpl.label = value.get<std::string>();
    else if (key == "items") tpl.items = value.get<std::vector<std::string>>();
    else if (key == "separator") tpl.separator = value.get<std::string>();
    else if (key == "coalesce") tpl.coalesce = value.get<bool>();
    else throw TemplateError("serializer", "unknown template key '" + key + "'");
  }
  return tpl;
}

bool default_coalesce(EventKind kind) {
  return kind == EventKind::Diagnosis || kind == EventKind::Medication ||
         kind == EventKind::Dispense;
}

}  // namespace

std::string_view doc_source_name(DocSource s) { return s == DocSource::Sci ? "sci" : "ehr"; }

TemplateSet TemplateSet::canonical() {
  TemplateSet t;
  t.version = "T1";
  t.demographic = parse_template_string(
      "Patient {patient_id} is a {age}-year-old {race} {sex} presenting to the emergency "
      "department.",
      true, false);
  auto set = [&](EventKind kind, const char* s) {
    t.clauses[static_cast<std::size_t>(kind)] =
        parse_template_string(s, false, default_coalesce(kind));
  };
  set(EventKind::Triage,
      "Triage: temperature {temperature} F, heart rate {heartrate} bpm, respiratory rate "
      "{resprate} breaths/min, oxygen saturation {o2sat}%, blood pressure {sbp}/{dbp} mmHg, "
      "pain {pain}, acuity {acuity}, chief complaint {chiefcomplaint}.");
  set(EventKind::Vital,
      "Vitals: temperature {temperature} F, heart rate {heartrate} bpm, respiratory rate "
      "{resprate} breaths/min, oxygen saturation {o2sat}%, blood pressure {sbp}/{dbp} mmHg, "
      "rhythm {rhythm}, pain {pain}.");
  set(EventKind::Diagnosis, "Diagnoses: {icd_code}.");
  set(EventKind::Medication, "Medications: {name}.");
  set(EventKind::Dispense, "Dispensed: {name}.");
  return t;
}

TemplateSet TemplateSet::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw TemplateError("serializer", "template file must be a JSON object");
  TemplateSet t = canonical();
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "version") {
        t.version = value.get<std::string>();
      } else if (key == "demographic") {
        t.demographic = parse_clause_json(value, true, false);
      } else if (const auto kind = parse_event_kind(key)) {
        t.clauses[static_cast<std::size_t>(*kind)] =
            parse_clause_json(value, false, default_coalesce(*kind));
      } else {
        throw TemplateError("serializer", "unknown template kind '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw TemplateError("serializer", std::string("malformed template file: ") + e.what());
  }
  t.validate();
  return t;
}

TemplateSet TemplateSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("serializer", "cannot open template file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw TemplateError("serializer", std::string("cannot parse template file: ") + e.what());
  }
  return from_json(j);
}

nlohmann::json TemplateSet::to_json() const {
  auto clause_json = [](const ClauseTemplate& c) {
    return nlohmann::json{{"label", c.label},
                          {"items", c.items},
                          {"separator", c.separator},
                          {"coalesce", c.coalesce}};
  };
  nlohmann::json j;
  j["version"] = version;
  j["demographic"] = clause_json(demographic);
  for (auto kind : kEventKinds) j[std::string(event_kind_name(kind))] = clause_json(clause(kind));
  return j;
}

void TemplateSet::validate() const {
  check_placeholders(demographic, kDemographicFields, "demographic");
  for (auto kind : kEventKinds) {
    check_placeholders(clause(kind), event_schema(kind), event_kind_name(kind));
  }
}

SerializedDocument serialize_patient(const PatientRecord& record, const TemplateSet& templates) {
  templates.validate();
  std::vector<std::string> clauses;
  if (const auto demo = render_body(templates.demographic, demographic_values(record))) {
    clauses.push_back(finish_clause(templates.demographic, *demo));
  }

  for (const auto& enc : record.admissions) {
    std::size_t i = 0;
    while (i < enc.events.size()) {
      const auto kind = enc.events[i].kind;
      const auto& tpl = templates.clause(kind);
      std::size_t j = i + 1;
      if (tpl.coalesce) {
        while (j < enc.events.size() && enc.events[j].kind == kind) ++j;
      }
      std::string joined;
      for (std::size_t k = i; k < j; ++k) {
        if (const auto body = render_body(tpl, event_values(enc.events[k]))) {
          if (!joined.empty()) joined += ", ";
          joined += *body;
        }
      }
      if (!joined.empty()) clauses.push_back(finish_clause(tpl, joined));
      i = j;
    }
  }

  std::string paragraph;
  for (const auto& c : clauses) {
    if (!paragraph.empty()) paragraph.push_back(' ');
    paragraph += c;
  }
  SerializedDocument doc;
  doc.doc_id = "ehr-" + record.patient_id;
  doc.source = DocSource::Ehr;
  doc.text = text::normalize_whitespace(paragraph);
  doc.patient_id = record.patient_id;
  return doc;
}

std::vector<SerializedDocument> serialize_cohort(const EhrDataset& dataset,
                                                 const TemplateSet& templates) {
  std::vector<const PatientRecord*> order;
  order.reserve(dataset.patients.size());
  for (const auto& p : dataset.patients) order.push_back(&p);
  std::sort(order.begin(), order.end(),
            [](const auto* a, const auto* b) { return a->patient_id < b->patient_id; });
  std::vector<SerializedDocument> docs;
  docs.reserve(order.size());
  for (const auto* p : order) docs.push_back(serialize_patient(*p, templates));
  return docs;
}

nlohmann::json to_json(const SerializedDocument& doc) {
  nlohmann::json j;
  j["doc_id"] = doc.doc_id;
  j["source"] = std::string(doc_source_name(doc.source));
  j["text"] = doc.text;
  j["patient_id"] = doc.patient_id ? nlohmann::json(*doc.patient_id) : nlohmann::json(nullptr);
  return j;
}

SerializedDocument document_from_json(const nlohmann::json& j) {
  SerializedDocument doc;
  try {
    doc.doc_id = j.at("doc_id").get<std::string>();
    const auto source = j.at("source").get<std::string>();
    if (source == "sci") doc.source = DocSource::Sci;
    else if (source == "ehr") doc.source = DocSource::Ehr;
    else throw SchemaError("corpus", "unknown document source '" + source + "'");
    doc.text = j.at("text").get<std::string>();
    if (j.contains("patient_id") && !j["patient_id"].is_null()) {
      doc.patient_id = j["patient_id"].get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("corpus", std::string("malformed document record: ") + e.what());
  }
  return doc;
}

void write_jsonl(const std::vector<SerializedDocument>& docs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("serializer", "cannot write " + path.string());
  for (const auto& d : docs) out << to_json(d).dump() << '\n';
  if (!out) throw IoError("serializer", "write failed for " + path.string());
}

std::vector<SerializedDocument> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("serializer", "cannot open " + path.string());
  std::vector<SerializedDocument> docs;
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("corpus", std::string("invalid JSON line: ") + e.what());
    }
    docs.push_back(document_from_json(j));
  }
  return docs;
}

}  // namespace ehrlm
