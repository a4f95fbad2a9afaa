// SPDX-License-Identifier: Apache-2.0
#include "ehrlm/synth.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "ehrlm/rng.hpp"

namespace ehrlm::synth {
namespace {

template <typename T, std::size_t N>
const T& pick(Rng& rng, const T (&items)[N]) {
  return items[rng.below(N)];
}

std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string integer(double v) { return std::to_string(static_cast<long long>(std::lround(v))); }

struct Diagnosis {
  const char* code;
  const char* title;
};

constexpr Diagnosis kDiagnoses[] = {
    {"L03115", "Cellulitis of right lower limb"},
    {"L03116", "Cellulitis of left lower limb"},
    {"L02411", "Cutaneous abscess of right axilla"},
    {"A419", "Sepsis, unspecified organism"},
    {"J189", "Pneumonia, unspecified organism"},
    {"M8618", "Other acute osteomyelitis"},
    {"T827XXA", "Infection due to cardiac and vascular devices"},
    {"N186", "End stage renal disease"},
    {"E119", "Type 2 diabetes mellitus"},
    {"I10", "Essential hypertension"},
    {"R509", "Fever, unspecified"},
    {"Z8614", "Personal history of MRSA infection"},
};
enum Dx { kCell1, kCell2, kAbscess, kSepsis, kPneumonia, kOsteo, kDevice, kEsrd, kDiabetes, kHtn, kFever, kMrsaHx };

constexpr const char* kComplaints[] = {"fever", "cellulitis", "abscess", "wound pain", "dyspnea", "weakness"};
constexpr const char* kRhythms[] = {"sinus", "sinus tachycardia", "atrial fibrillation"};
constexpr const char* kRaces[] = {"White", "Black", "Asian", "Hispanic", "Other"};
constexpr const char* kSupportive[] = {"Acetaminophen", "Heparin", "Insulin", "Ondansetron"};

// Prior antibiotic exposure, each lowering susceptibility to related drugs.
enum Prior { kPriorVanc, kPriorClinda, kPriorLevo, kPriorDoxy, kPriorTmp, kPriorCefaz, kNumPrior };
constexpr const char* kPriorNames[kNumPrior] = {"Vancomycin",  "Clindamycin",  "Levofloxacin",
                                                "Doxycycline", "Sulfamethoxazole-trimethoprim", "Cefazolin"};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Latent {
  bool mrsa = false;
  bool prior[kNumPrior] = {};
  bool esrd = false;
};

// Log-odds of susceptibility per antibiotic, in kAntibiotics order.
std::array<double, kNumAntibiotics> susceptibility_logits(const Latent& z) {
  std::array<double, kNumAntibiotics> l = {1.6, 1.0, 3.2, 1.8, 2.2, 2.0, 2.8, 4.5};
  if (z.mrsa) {
    l[0] -= 1.8;  // clindamycin
    l[1] -= 2.6;  // erythromycin
    l[3] -= 2.6;  // levofloxacin
    l[4] -= 6.0;  // oxacillin
    l[5] -= 0.6;
  }
  if (z.prior[kPriorClinda]) l[0] -= 2.0, l[1] -= 1.0;
  if (z.prior[kPriorLevo]) l[3] -= 2.2;
  if (z.prior[kPriorDoxy]) l[5] -= 2.4;
  if (z.prior[kPriorTmp]) l[6] -= 2.6;
  if (z.prior[kPriorCefaz]) l[4] -= 1.0;
  if (z.esrd) l[2] -= 1.5, l[7] -= 1.5;
  return l;
}

ClinicalEvent vital_sign_event(EventKind kind, Timestamp t, Rng& rng, bool septic) {
  ClinicalEvent e;
  e.kind = kind;
  e.timestamp = t;
  const double temp = (septic ? 100.8 : 98.6) + rng.normal() * 0.8;
  e.payload["temperature"] = fixed(temp, 1);
  e.payload["heartrate"] = integer((septic ? 108.0 : 84.0) + rng.normal() * 10.0);
  e.payload["resprate"] = integer((septic ? 22.0 : 16.0) + rng.normal() * 2.0);
  e.payload["o2sat"] = integer(std::min(100.0, (septic ? 93.0 : 97.5) + rng.normal() * 1.5));
  e.payload["sbp"] = integer((septic ? 104.0 : 128.0) + rng.normal() * 12.0);
  e.payload["dbp"] = integer((septic ? 62.0 : 78.0) + rng.normal() * 8.0);
  if (rng.bernoulli(0.7)) e.payload["pain"] = std::to_string(rng.below(11));
  if (kind == EventKind::Triage) {
    e.payload["acuity"] = std::to_string(septic ? 1 + rng.below(2) : 2 + rng.below(3));
    e.payload["chiefcomplaint"] = septic ? "fever" : pick(rng, kComplaints);
  } else if (rng.bernoulli(0.6)) {
    e.payload["rhythm"] = septic ? "sinus tachycardia" : pick(rng, kRhythms);
  }
  return e;
}

ClinicalEvent named_event(EventKind kind, Timestamp t, const std::string& name) {
  return {kind, t, {{"name", name}}};
}

ClinicalEvent diagnosis_event(Timestamp t, const Diagnosis& d) {
  return {EventKind::Diagnosis, t, {{"icd_code", d.code}, {"icd_version", "10"}, {"icd_title", d.title}}};
}

}  // namespace

EhrDataset make_ehr(const EhrOptions& opt) {
  Rng rng(opt.seed);
  EhrDataset ds;
  const Timestamp origin = *parse_timestamp("2150-01-01");
  constexpr Timestamp kDay = 86400;
  char id[32];
  std::size_t admission_counter = 0;
  for (std::size_t p = 0; p < opt.patients; ++p) {
    PatientRecord rec;
    std::snprintf(id, sizeof id, "S%05zu", p);
    rec.patient_id = id;
    rec.demographics.age = static_cast<double>(18 + rng.below(73));
    rec.demographics.sex = rng.bernoulli(0.5) ? "F" : "M";
    rec.demographics.race = pick(rng, kRaces);

    Latent z;
    z.mrsa = rng.bernoulli(0.35);
    z.esrd = rng.bernoulli(z.mrsa ? 0.25 : 0.08);
    for (int k = 0; k < kNumPrior; ++k) z.prior[k] = rng.bernoulli(k == kPriorVanc && z.mrsa ? 0.45 : 0.15);
    const bool diabetic = rng.bernoulli(0.3);

    std::size_t encounters = 1;
    if (rng.bernoulli(opt.multi_encounter_fraction)) encounters = 2 + rng.below(3);
    Timestamp t = origin + static_cast<Timestamp>(rng.below(3 * 365)) * kDay;
    for (std::size_t e = 0; e < encounters; ++e) {
      Encounter enc;
      std::snprintf(id, sizeof id, "H%06zu", admission_counter++);
      enc.admission_id = id;
      t += static_cast<Timestamp>(30 + rng.below(300)) * kDay + static_cast<Timestamp>(rng.below(86400));
      enc.arrival_time = t;
      enc.culture_positive = rng.bernoulli(opt.culture_positive_rate);
      const bool septic = rng.bernoulli(z.mrsa ? 0.35 : 0.2);

      // Triage, then diagnoses and orders, then repeat vitals, so the
      // informative clauses come early in the serialized text.
      Timestamp ct = t + 300 + static_cast<Timestamp>(rng.below(900));
      enc.events.push_back(vital_sign_event(EventKind::Triage, ct, rng, septic));

      ct += 600;
      std::vector<int> dx;
      dx.push_back(septic ? kSepsis : static_cast<int>(rng.below(3)));
      if (rng.bernoulli(0.25)) dx.push_back(rng.bernoulli(0.5) ? kPneumonia : kOsteo);
      if (z.mrsa && rng.bernoulli(0.4)) dx.push_back(kMrsaHx);
      if (z.mrsa && rng.bernoulli(0.2)) dx.push_back(kDevice);
      if (z.esrd) dx.push_back(kEsrd);
      if (diabetic) dx.push_back(kDiabetes);
      if (rng.bernoulli(0.35)) dx.push_back(kHtn);
      if (septic || rng.bernoulli(0.2)) dx.push_back(kFever);
      for (int d : dx) enc.events.push_back(diagnosis_event(ct, kDiagnoses[d]));

      ct += 1200;
      for (int k = 0; k < kNumPrior; ++k) {
        if (z.prior[k] && rng.bernoulli(0.8)) enc.events.push_back(named_event(EventKind::Medication, ct, kPriorNames[k]));
      }
      if (rng.bernoulli(0.5)) enc.events.push_back(named_event(EventKind::Medication, ct, pick(rng, kSupportive)));
      ct += 900;
      if (rng.bernoulli(0.6)) {
        enc.events.push_back(named_event(EventKind::Dispense, ct, z.mrsa ? "Vancomycin 1g" : "Cefazolin 2g"));
      }
      const std::size_t vitals = rng.below(3);
      for (std::size_t v = 0; v < vitals; ++v) {
        ct += 1800 + static_cast<Timestamp>(rng.below(7200));
        enc.events.push_back(vital_sign_event(EventKind::Vital, ct, rng, septic));
      }

      if (enc.culture_positive) {
        const auto logits = susceptibility_logits(z);
        for (std::size_t k = 0; k < kNumAntibiotics; ++k) {
          if (!rng.bernoulli(opt.test_rate)) continue;
          enc.susceptibility[k] = rng.bernoulli(sigmoid(logits[k])) ? Susceptibility::Susceptible
                                                                    : Susceptibility::Resistant;
        }
      }
      rec.admissions.push_back(std::move(enc));
    }
    normalize(rec);
    ds.patients.push_back(std::move(rec));
  }
  return ds;
}

std::vector<SerializedDocument> make_sci_docs(std::size_t n, std::uint64_t seed) {
  static constexpr const char* kOrganisms[] = {"Staphylococcus aureus", "coagulase-negative staphylococci",
                                               "Staphylococcus epidermidis", "methicillin-resistant S. aureus"};
  static constexpr const char* kDrugs[] = {"clindamycin", "erythromycin", "gentamicin", "levofloxacin",
                                           "oxacillin",   "tetracycline", "trimethoprim", "vancomycin"};
  static constexpr const char* kSites[] = {"skin and soft tissue", "bloodstream", "bone and joint",
                                           "respiratory", "device-associated"};
  static constexpr const char* kTrends[] = {"increasing", "stable", "declining", "high", "low"};
  static constexpr const char* kMethods[] = {"broth microdilution", "disk diffusion", "gradient strip testing"};
  static constexpr const char* kOutcomes[] = {"mortality", "length of stay", "readmission", "treatment failure"};

  Rng rng(seed);
  std::vector<SerializedDocument> docs;
  char id[32];
  for (std::size_t i = 0; i < n; ++i) {
    std::string text;
    const std::size_t sentences = 3 + rng.below(3);
    for (std::size_t s = 0; s < sentences; ++s) {
      std::string line;
      switch (rng.below(5)) {
        case 0:
          line = std::string("We studied ") + std::to_string(50 + rng.below(950)) + " " + pick(rng, kOrganisms) +
                 " isolates from " + pick(rng, kSites) + " infections.";
          break;
        case 1:
          line = std::string("Resistance to ") + pick(rng, kDrugs) + " was " + pick(rng, kTrends) + " at " +
                 std::to_string(rng.below(100)) + " percent.";
          break;
        case 2:
          line = std::string("Susceptibility to ") + pick(rng, kDrugs) + " and " + pick(rng, kDrugs) +
                 " was measured by " + pick(rng, kMethods) + ".";
          break;
        case 3:
          line = std::string("Inappropriate empiric therapy was associated with higher ") + pick(rng, kOutcomes) +
                 ".";
          break;
        default:
          line = std::string("Prior exposure to ") + pick(rng, kDrugs) + " predicted resistance to " +
                 pick(rng, kDrugs) + " in " + pick(rng, kSites) + " infections.";
          break;
      }
      text += (text.empty() ? "" : " ") + line;
    }
    std::snprintf(id, sizeof id, "sci-%05zu", i);
    docs.push_back({id, DocSource::Sci, std::move(text), std::nullopt});
  }
  return docs;
}

}  // namespace ehrlm::synth
