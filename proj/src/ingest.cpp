// SPDX-License-Identifier: Apache-2.0
#include "ehrlm/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <unordered_map>

#include "ehrlm/csv.hpp"
#include "ehrlm/error.hpp"
#include "ehrlm/rng.hpp"
#include "ehrlm/text.hpp"

namespace ehrlm {

namespace {

constexpr std::array<FieldSpec, 9> kTriageFields = {{{"temperature", true},
                                                     {"heartrate", true},
                                                     {"resprate", true},
                                                     {"o2sat", true},
                                                     {"sbp", true},
                                                     {"dbp", true},
                                                     {"pain", false},
                                                     {"acuity", true},
                                                     {"chiefcomplaint", false}}};
constexpr std::array<FieldSpec, 8> kVitalFields = {{{"temperature", true},
                                                    {"heartrate", true},
                                                    {"resprate", true},
                                                    {"o2sat", true},
                                                    {"sbp", true},
                                                    {"dbp", true},
                                                    {"rhythm", false},
                                                    {"pain", false}}};
constexpr std::array<FieldSpec, 3> kDiagnosisFields = {
    {{"icd_code", false}, {"icd_version", false}, {"icd_title", false}}};
constexpr std::array<FieldSpec, 1> kMedicationFields = {{{"name", false}}};
constexpr std::array<FieldSpec, 1> kDispenseFields = {{{"name", false}}};

const std::vector<std::string> kPatientColumns = {"patient_id", "age", "sex", "race"};
const std::vector<std::string> kEncounterColumns = {"patient_id", "admission_id",
                                                    "arrival_time", "culture_positive"};
const std::vector<std::string> kSusceptibilityColumns = {"admission_id", "antibiotic",
                                                         "label"};
const std::vector<std::string> kEventKeyColumns = {"patient_id", "admission_id", "charttime"};

// Civil-calendar conversions (proleptic Gregorian).
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp < 10 ? mp + 3 : mp - 9;
  y += m <= 2;
}

bool parse_fixed(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  int v = 0;
  for (std::size_t i = pos; i < pos + len; ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
    v = v * 10 + (s[i] - '0');
  }
  out = v;
  return true;
}

// Resolves required columns; throws SchemaError naming the first missing or
// duplicated column.
std::vector<std::size_t> resolve_columns(const csv::Table& table,
                                         const std::vector<std::string>& required,
                                         const std::string& file) {
  std::set<std::string> seen;
  for (const auto& h : table.header) {
    if (!seen.insert(h).second) {
      throw SchemaError("ingest", file + ": duplicate column '" + h + "'");
    }
  }
  std::vector<std::size_t> idx;
  idx.reserve(required.size());
  for (const auto& name : required) {
    const auto col = table.column(name);
    if (!col) throw SchemaError("ingest", file + ": missing column '" + name + "'");
    idx.push_back(*col);
  }
  return idx;
}

csv::Table read_required(const std::filesystem::path& dir, const std::string& file) {
  const auto path = dir / file;
  if (!std::filesystem::exists(path)) {
    throw MissingTable("ingest", "required table not found: " + path.string());
  }
  auto table = csv::read_file(path);
  if (table.header.empty()) throw SchemaError("ingest", file + ": missing header row");
  return table;
}

std::string field(const std::vector<std::string>& row, std::size_t col) {
  return col < row.size() ? std::string(text::trim(row[col])) : std::string();
}

bool event_less(const ClinicalEvent& a, const ClinicalEvent& b) {
  if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
  return a.kind < b.kind;
}

}  // namespace

std::string_view event_kind_name(EventKind kind) {
  switch (kind) {
    case EventKind::Triage: return "triage";
    case EventKind::Vital: return "vitals";
    case EventKind::Diagnosis: return "diagnoses";
    case EventKind::Medication: return "medications";
    case EventKind::Dispense: return "dispense";
  }
  return "unknown";
}

std::optional<EventKind> parse_event_kind(std::string_view name) {
  for (auto kind : kEventKinds) {
    if (event_kind_name(kind) == name) return kind;
  }
  return std::nullopt;
}

std::span<const FieldSpec> event_schema(EventKind kind) {
  switch (kind) {
    case EventKind::Triage: return kTriageFields;
    case EventKind::Vital: return kVitalFields;
    case EventKind::Diagnosis: return kDiagnosisFields;
    case EventKind::Medication: return kMedicationFields;
    case EventKind::Dispense: return kDispenseFields;
  }
  return {};
}

std::string_view event_table_file(EventKind kind) {
  switch (kind) {
    case EventKind::Triage: return "triage.csv";
    case EventKind::Vital: return "vitals.csv";
    case EventKind::Diagnosis: return "diagnoses.csv";
    case EventKind::Medication: return "medications.csv";
    case EventKind::Dispense: return "dispense.csv";
  }
  return "";
}

std::optional<std::size_t> antibiotic_index(std::string_view name) {
  const auto lowered = text::to_lower(text::trim(name));
  for (std::size_t i = 0; i < kAntibiotics.size(); ++i) {
    if (text::to_lower(kAntibiotics[i]) == lowered) return i;
  }
  if (lowered == "trimethoprim/sul" || lowered == "trimethroprim/sul" ||
      lowered == "trimethoprim/sulfamethoxazole") {
    return 6;
  }
  return std::nullopt;
}

std::optional<Timestamp> parse_timestamp(std::string_view s) {
  s = text::trim(s);
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  if (s.size() < 10 || !parse_fixed(s, 0, 4, y) || s[4] != '-' || !parse_fixed(s, 5, 2, mo) ||
      s[7] != '-' || !parse_fixed(s, 8, 2, d)) {
    return std::nullopt;
  }
  if (s.size() > 10) {
    if (s[10] != 'T' && s[10] != ' ') return std::nullopt;
    if (!parse_fixed(s, 11, 2, h) || s.size() < 16 || s[13] != ':' ||
        !parse_fixed(s, 14, 2, mi)) {
      return std::nullopt;
    }
    if (s.size() > 16) {
      if (s.size() != 19 || s[16] != ':' || !parse_fixed(s, 17, 2, sec)) return std::nullopt;
    }
  }
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || sec > 59) {
    return std::nullopt;
  }
  const auto days = days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d));
  std::int64_t y2 = 0;
  unsigned m2 = 0, d2 = 0;
  civil_from_days(days, y2, m2, d2);
  if (m2 != static_cast<unsigned>(mo) || d2 != static_cast<unsigned>(d)) return std::nullopt;
  return days * 86400 + h * 3600 + mi * 60 + sec;
}

std::string format_timestamp(Timestamp t) {
  std::int64_t days = t / 86400;
  std::int64_t rem = t % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  std::int64_t y = 0;
  unsigned m = 0, d = 0;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02lld:%02lld:%02lld",
                static_cast<long long>(y), m, d, static_cast<long long>(rem / 3600),
                static_cast<long long>((rem / 60) % 60), static_cast<long long>(rem % 60));
  return buf;
}

std::size_t Encounter::tested_count() const {
  return static_cast<std::size_t>(
      std::count_if(susceptibility.begin(), susceptibility.end(),
                    [](Susceptibility s) { return s != Susceptibility::Untested; }));
}

std::size_t EhrDataset::encounter_count() const {
  std::size_t n = 0;
  for (const auto& p : patients) n += p.admissions.size();
  return n;
}

void normalize(PatientRecord& record) {
  for (auto& enc : record.admissions) {
    std::stable_sort(enc.events.begin(), enc.events.end(), event_less);
  }
  std::stable_sort(record.admissions.begin(), record.admissions.end(),
                   [](const Encounter& a, const Encounter& b) {
                     return a.arrival_time < b.arrival_time;
                   });
}

EhrDataset load_tables(const std::filesystem::path& dir) {
  EhrDataset ds;

  // Read every table up front so a missing file is reported before any join.
  auto patients = read_required(dir, "patients.csv");
  auto encounters = read_required(dir, "encounters.csv");
  std::array<csv::Table, kEventKinds.size()> events;
  for (auto kind : kEventKinds) {
    events[static_cast<std::size_t>(kind)] =
        read_required(dir, std::string(event_table_file(kind)));
  }
  auto susceptibility = read_required(dir, "susceptibility.csv");

  const auto pcols = resolve_columns(patients, kPatientColumns, "patients.csv");
  const auto ecols = resolve_columns(encounters, kEncounterColumns, "encounters.csv");
  const auto scols =
      resolve_columns(susceptibility, kSusceptibilityColumns, "susceptibility.csv");

  ds.table_manifest["patients"] = patients.rows.size();
  ds.table_manifest["encounters"] = encounters.rows.size();
  ds.table_manifest["susceptibility"] = susceptibility.rows.size();

  std::map<std::string, PatientRecord> by_id;
  for (const auto& row : patients.rows) {
    PatientRecord rec;
    rec.patient_id = field(row, pcols[0]);
    if (rec.patient_id.empty() || by_id.count(rec.patient_id)) {
      ++ds.warnings.bad_value;
      continue;
    }
    const auto age_text = field(row, pcols[1]);
    if (!age_text.empty()) {
      const auto age = text::parse_number(age_text);
      if (age && *age >= 0.0) {
        rec.demographics.age = *age;
      } else {
        ++ds.warnings.bad_value;
      }
    }
    rec.demographics.sex = field(row, pcols[2]);
    rec.demographics.race = field(row, pcols[3]);
    by_id.emplace(rec.patient_id, std::move(rec));
  }

  // admission_id -> (patient_id, index into admissions)
  std::unordered_map<std::string, std::pair<std::string, std::size_t>> admissions;
  for (const auto& row : encounters.rows) {
    const auto pid = field(row, ecols[0]);
    const auto it = by_id.find(pid);
    if (it == by_id.end()) {
      ++ds.warnings.unknown_patient;
      continue;
    }
    Encounter enc;
    enc.admission_id = field(row, ecols[1]);
    const auto arrival = parse_timestamp(field(row, ecols[2]));
    if (!arrival) {
      ++ds.warnings.bad_timestamp;
      continue;
    }
    enc.arrival_time = *arrival;
    const auto flag = field(row, ecols[3]);
    if (flag == "1" || text::to_lower(flag) == "true") {
      enc.culture_positive = true;
    } else if (!(flag == "0" || text::to_lower(flag) == "false" || flag.empty())) {
      ++ds.warnings.bad_value;
    }
    if (enc.admission_id.empty() || admissions.count(enc.admission_id)) {
      ++ds.warnings.duplicate_admission;
      continue;
    }
    admissions.emplace(enc.admission_id, std::make_pair(pid, it->second.admissions.size()));
    it->second.admissions.push_back(std::move(enc));
  }

  for (auto kind : kEventKinds) {
    const auto& table = events[static_cast<std::size_t>(kind)];
    const std::string file(event_table_file(kind));
    std::vector<std::string> required = kEventKeyColumns;
    for (const auto& f : event_schema(kind)) required.emplace_back(f.name);
    const auto cols = resolve_columns(table, required, file);
    ds.table_manifest[std::string(event_kind_name(kind))] = table.rows.size();

    for (const auto& row : table.rows) {
      const auto pid = field(row, cols[0]);
      const auto pit = by_id.find(pid);
      if (pit == by_id.end()) {
        ++ds.warnings.unknown_patient;
        continue;
      }
      const auto ait = admissions.find(field(row, cols[1]));
      if (ait == admissions.end() || ait->second.first != pid) {
        ++ds.warnings.unknown_admission;
        continue;
      }
      const auto ts = parse_timestamp(field(row, cols[2]));
      if (!ts) {
        ++ds.warnings.bad_timestamp;
        continue;
      }
      ClinicalEvent ev;
      ev.kind = kind;
      ev.timestamp = *ts;
      const auto schema = event_schema(kind);
      for (std::size_t f = 0; f < schema.size(); ++f) {
        auto value = field(row, cols[3 + f]);
        if (!value.empty()) ev.payload.emplace(std::string(schema[f].name), std::move(value));
      }
      pit->second.admissions[ait->second.second].events.push_back(std::move(ev));
    }
  }

  for (const auto& row : susceptibility.rows) {
    const auto ait = admissions.find(field(row, scols[0]));
    if (ait == admissions.end()) {
      ++ds.warnings.unknown_admission;
      continue;
    }
    const auto abx = antibiotic_index(field(row, scols[1]));
    const auto label = field(row, scols[2]);
    if (!abx || (label != "0" && label != "1")) {
      ++ds.warnings.bad_value;
      continue;
    }
    auto& enc = by_id.at(ait->second.first).admissions[ait->second.second];
    enc.susceptibility[*abx] = label == "1" ? Susceptibility::Susceptible
                                            : Susceptibility::Resistant;
  }

  ds.patients.reserve(by_id.size());
  for (auto& [id, rec] : by_id) {
    normalize(rec);
    ds.patients.push_back(std::move(rec));
  }
  return ds;
}

void write_tables(const EhrDataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  csv::Table patients{kPatientColumns, {}};
  csv::Table encounters{kEncounterColumns, {}};
  csv::Table susceptibility{kSusceptibilityColumns, {}};
  std::array<csv::Table, kEventKinds.size()> events;
  for (auto kind : kEventKinds) {
    auto& t = events[static_cast<std::size_t>(kind)];
    t.header = kEventKeyColumns;
    for (const auto& f : event_schema(kind)) t.header.emplace_back(f.name);
  }

  for (const auto& p : dataset.patients) {
    const auto& demo = p.demographics;
    patients.rows.push_back({p.patient_id,
                             demo.age ? text::format_double(*demo.age) : std::string(),
                             demo.sex, demo.race});
    for (const auto& enc : p.admissions) {
      encounters.rows.push_back({p.patient_id, enc.admission_id,
                                 format_timestamp(enc.arrival_time),
                                 enc.culture_positive ? "1" : "0"});
      for (const auto& ev : enc.events) {
        std::vector<std::string> row = {p.patient_id, enc.admission_id,
                                        format_timestamp(ev.timestamp)};
        for (const auto& f : event_schema(ev.kind)) {
          const auto it = ev.payload.find(std::string(f.name));
          row.push_back(it == ev.payload.end() ? std::string() : it->second);
        }
        events[static_cast<std::size_t>(ev.kind)].rows.push_back(std::move(row));
      }
      for (std::size_t a = 0; a < kNumAntibiotics; ++a) {
        const auto s = enc.susceptibility[a];
        if (s == Susceptibility::Untested) continue;
        susceptibility.rows.push_back({enc.admission_id, std::string(kAntibiotics[a]),
                                       s == Susceptibility::Susceptible ? "1" : "0"});
      }
    }
  }

  csv::write_file(dir / "patients.csv", patients);
  csv::write_file(dir / "encounters.csv", encounters);
  for (auto kind : kEventKinds) {
    csv::write_file(dir / event_table_file(kind), events[static_cast<std::size_t>(kind)]);
  }
  csv::write_file(dir / "susceptibility.csv", susceptibility);
}

CohortResult build_cohort(const EhrDataset& dataset, const CohortCriteria& criteria) {
  CohortResult result;
  auto& report = result.report;
  result.cohort.table_manifest = dataset.table_manifest;
  result.cohort.warnings = dataset.warnings;
  report.patients_in = dataset.patients.size();
  for (const auto& p : dataset.patients) {
    report.encounters_in += p.admissions.size();
    PatientRecord kept{p.patient_id, p.demographics, {}};
    for (const auto& enc : p.admissions) {
      const bool culture_ok = enc.culture_positive || !criteria.require_culture_positive;
      const std::size_t tested = enc.tested_count();
      if (culture_ok && tested >= criteria.min_tested_antibiotics) {
        kept.admissions.push_back(enc);
        report.tested_labels_out += tested;
      }
    }
    if (!kept.admissions.empty()) {
      report.encounters_out += kept.admissions.size();
      result.cohort.patients.push_back(std::move(kept));
    }
  }
  report.patients_out = result.cohort.patients.size();
  report.empty = report.patients_out == 0;
  return result;
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "unknown";
}

std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "validation") return Split::Validation;
  if (s == "test") return Split::Test;
  return std::nullopt;
}

std::optional<Split> SplitAssignment::find(const std::string& patient_id) const {
  const auto it = by_patient.find(patient_id);
  if (it == by_patient.end()) return std::nullopt;
  return it->second;
}

SplitAssignment group_split(const EhrDataset& cohort, const SplitRatios& ratios,
                            std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(cohort.patients.size());
  for (const auto& p : cohort.patients) ids.push_back(p.patient_id);
  return group_split(std::move(ids), ratios, seed);
}

SplitAssignment group_split(std::vector<std::string> patient_ids, const SplitRatios& ratios,
                            std::uint64_t seed) {
  const std::array<double, 3> r = {ratios.train, ratios.validation, ratios.test};
  for (double x : r) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw ConfigError("ingest", "split ratios must be nonnegative");
    }
  }
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) {
    throw ConfigError("ingest", "split ratios must sum to 1");
  }

  std::sort(patient_ids.begin(), patient_ids.end());
  patient_ids.erase(std::unique(patient_ids.begin(), patient_ids.end()), patient_ids.end());
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(patient_ids));

  const auto n = static_cast<double>(patient_ids.size());
  const auto cut_train = static_cast<std::size_t>(std::llround(r[0] * n));
  const auto cut_val = std::min(patient_ids.size(),
                                static_cast<std::size_t>(std::llround((r[0] + r[1]) * n)));

  SplitAssignment out;
  out.seed = seed;
  out.ratios = ratios;
  for (std::size_t i = 0; i < patient_ids.size(); ++i) {
    Split s = Split::Test;
    if (i < cut_train) s = Split::Train;
    else if (i < cut_val) s = Split::Validation;
    out.by_patient.emplace(patient_ids[i], s);
  }
  return out;
}

void write_splits(const SplitAssignment& splits, const std::filesystem::path& path) {
  csv::Table t{{"patient_id", "split"}, {}};
  for (const auto& [id, s] : splits.by_patient) t.rows.push_back({id, std::string(split_name(s))});
  csv::write_file(path, t);
}

SplitAssignment read_splits(const std::filesystem::path& path) {
  const auto t = csv::read_file(path);
  const auto cols = resolve_columns(t, {"patient_id", "split"}, path.filename().string());
  SplitAssignment out;
  for (const auto& row : t.rows) {
    const auto s = parse_split(field(row, cols[1]));
    if (!s) throw SchemaError("ingest", "bad split value in " + path.string());
    out.by_patient[field(row, cols[0])] = *s;
  }
  return out;
}

}  // namespace ehrlm
