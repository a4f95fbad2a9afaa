// SPDX-License-Identifier: Apache-2.0
//
// Tabular EHR loading, per-patient joining, cohort selection, and
// patient-grouped split assignment.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ehrlm {

/// Event tables in tie-break precedence order: when two events share a
/// timestamp the one whose kind compares lower is emitted first.
enum class EventKind : std::uint8_t { Triage, Vital, Diagnosis, Medication, Dispense };

inline constexpr std::array<EventKind, 5> kEventKinds = {
    EventKind::Triage, EventKind::Vital, EventKind::Diagnosis, EventKind::Medication,
    EventKind::Dispense};

std::string_view event_kind_name(EventKind kind);
std::optional<EventKind> parse_event_kind(std::string_view name);

struct FieldSpec {
  std::string_view name;
  bool numeric;
};

/// Payload schema of each event kind; also the file columns after
/// patient_id,admission_id,charttime.
std::span<const FieldSpec> event_schema(EventKind kind);
std::string_view event_table_file(EventKind kind);

inline constexpr std::size_t kNumAntibiotics = 8;
inline constexpr std::array<std::string_view, kNumAntibiotics> kAntibiotics = {
    "Clindamycin", "Erythromycin", "Gentamicin",         "Levofloxacin",
    "Oxacillin",   "Tetracycline", "Trimethoprim/sulfa", "Vancomycin"};

/// Case-insensitive antibiotic lookup; also accepts "trimethoprim/sul".
std::optional<std::size_t> antibiotic_index(std::string_view name);

/// Susceptibility result. Untested is a distinct state and never imputed.
enum class Susceptibility : std::int8_t { Resistant = 0, Susceptible = 1, Untested = -1 };

using SusceptibilityPanel = std::array<Susceptibility, kNumAntibiotics>;

inline SusceptibilityPanel untested_panel() {
  SusceptibilityPanel p;
  p.fill(Susceptibility::Untested);
  return p;
}

/// Seconds since 1970-01-01T00:00:00 (no time zone).
using Timestamp = std::int64_t;

/// Accepts "YYYY-MM-DD", "YYYY-MM-DD HH:MM", "YYYY-MM-DD HH:MM:SS", with 'T'
/// or ' ' as the separator.
std::optional<Timestamp> parse_timestamp(std::string_view s);
std::string format_timestamp(Timestamp t);

struct ClinicalEvent {
  EventKind kind = EventKind::Triage;
  Timestamp timestamp = 0;
  /// Only non-empty values are stored; absent keys are missing values.
  std::map<std::string, std::string> payload;

  bool operator==(const ClinicalEvent&) const = default;
};

struct Encounter {
  std::string admission_id;
  Timestamp arrival_time = 0;
  bool culture_positive = false;
  std::vector<ClinicalEvent> events;
  SusceptibilityPanel susceptibility = untested_panel();

  std::size_t tested_count() const;
  bool operator==(const Encounter&) const = default;
};

struct Demographics {
  std::optional<double> age;
  std::string sex;
  std::string race;

  bool operator==(const Demographics&) const = default;
};

struct PatientRecord {
  std::string patient_id;
  Demographics demographics;
  std::vector<Encounter> admissions;

  bool operator==(const PatientRecord&) const = default;
};

/// Rows dropped while joining, by reason.
struct IngestWarnings {
  std::size_t unknown_patient = 0;
  std::size_t unknown_admission = 0;
  std::size_t bad_timestamp = 0;
  std::size_t bad_value = 0;
  std::size_t duplicate_admission = 0;

  std::size_t total() const {
    return unknown_patient + unknown_admission + bad_timestamp + bad_value +
           duplicate_admission;
  }
};

struct EhrDataset {
  /// Sorted ascending by patient_id.
  std::vector<PatientRecord> patients;
  std::map<std::string, std::size_t> table_manifest;
  IngestWarnings warnings;

  std::size_t encounter_count() const;
};

/// Loads the eight CSV tables from `dir` and joins them per patient.
/// Throws MissingTable or SchemaError; row-level problems are dropped and
/// tallied in `warnings`.
EhrDataset load_tables(const std::filesystem::path& dir);

/// Writes `dataset` in the format read by load_tables.
void write_tables(const EhrDataset& dataset, const std::filesystem::path& dir);

/// Sorts events (timestamp, then kind precedence, stable otherwise) and
/// admissions by arrival time. load_tables already returns normalized data.
void normalize(PatientRecord& record);

struct CohortCriteria {
  bool require_culture_positive = true;
  std::size_t min_tested_antibiotics = 1;
};

struct CohortReport {
  std::size_t patients_in = 0;
  std::size_t encounters_in = 0;
  std::size_t patients_out = 0;
  std::size_t encounters_out = 0;
  std::size_t tested_labels_out = 0;
  bool empty = false;
};

struct CohortResult {
  EhrDataset cohort;
  CohortReport report;
};

CohortResult build_cohort(const EhrDataset& dataset, const CohortCriteria& criteria);

enum class Split : std::uint8_t { Train, Validation, Test };
std::string_view split_name(Split s);
std::optional<Split> parse_split(std::string_view s);

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct SplitAssignment {
  std::map<std::string, Split> by_patient;
  std::uint64_t seed = 0;
  SplitRatios ratios;

  std::optional<Split> find(const std::string& patient_id) const;
};

/// Patient-grouped split. Distinct patient ids are sorted, shuffled with
/// Rng(seed), and cut at the rounded cumulative ratios. Throws ConfigError
/// when a ratio is negative or they do not sum to 1 within 1e-9.
SplitAssignment group_split(const EhrDataset& cohort, const SplitRatios& ratios,
                            std::uint64_t seed);
SplitAssignment group_split(std::vector<std::string> patient_ids,
                            const SplitRatios& ratios, std::uint64_t seed);

void write_splits(const SplitAssignment& splits, const std::filesystem::path& path);
SplitAssignment read_splits(const std::filesystem::path& path);

}  // namespace ehrlm
