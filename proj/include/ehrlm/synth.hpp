// SPDX-License-Identifier: Apache-2.0
//
// Seeded synthetic stand-ins for the restricted clinical tables and the
// scientific abstract corpus. Susceptibility outcomes depend on recorded
// diagnoses and prior medications, so the text carries real signal.
#pragma once

#include <cstdint>
#include <vector>

#include "ehrlm/ingest.hpp"
#include "ehrlm/serializer.hpp"

namespace ehrlm::synth {

struct EhrOptions {
  std::size_t patients = 1700;
  /// Share of patients with two or more encounters.
  double multi_encounter_fraction = 0.3;
  /// Share of encounters with a positive staphylococcal culture.
  double culture_positive_rate = 0.85;
  /// Per-antibiotic probability that a positive culture was tested.
  double test_rate = 0.75;
  std::uint64_t seed = 0;
};

/// Normalized dataset; patient ids are "S" followed by a zero-padded index.
EhrDataset make_ehr(const EhrOptions& options);

/// Short scientific-style abstracts about staphylococcal resistance.
std::vector<SerializedDocument> make_sci_docs(std::size_t n, std::uint64_t seed);

}  // namespace ehrlm::synth
