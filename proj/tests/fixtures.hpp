// SPDX-License-Identifier: Apache-2.0
//
// Small hand-written table directories shared by ingest and serializer tests.
#pragma once

#include <filesystem>
#include <string>

#include "support.hpp"

namespace testing {

inline void write_empty_event_tables(const std::filesystem::path& dir) {
  write_text(dir / "triage.csv",
             "patient_id,admission_id,charttime,temperature,heartrate,resprate,o2sat,sbp,dbp,pain,"
             "acuity,chiefcomplaint\n");
  write_text(dir / "vitals.csv",
             "patient_id,admission_id,charttime,temperature,heartrate,resprate,o2sat,sbp,dbp,"
             "rhythm,pain\n");
  write_text(dir / "diagnoses.csv", "patient_id,admission_id,charttime,icd_code,icd_version,icd_title\n");
  write_text(dir / "medications.csv", "patient_id,admission_id,charttime,name\n");
  write_text(dir / "dispense.csv", "patient_id,admission_id,charttime,name\n");
}

/// Three patients, five encounters.
inline void write_small_tables(const std::filesystem::path& dir) {
  write_text(dir / "patients.csv",
             "patient_id,age,sex,race\n"
             "P1,64,F,White\n"
             "P2,41,M,Black\n"
             "P3,,F,\n");
  write_text(dir / "encounters.csv",
             "patient_id,admission_id,arrival_time,culture_positive\n"
             "P1,A2,2150-03-02T10:00:00,1\n"
             "P1,A1,2150-01-01T08:00:00,1\n"
             "P2,A3,2151-05-05 12:30,0\n"
             "P2,A4,2151-06-01,1\n"
             "P3,A5,2149-12-31T23:59:59,1\n");
  write_text(dir / "triage.csv",
             "patient_id,admission_id,charttime,temperature,heartrate,resprate,o2sat,sbp,dbp,pain,"
             "acuity,chiefcomplaint\n"
             "P1,A1,2150-01-01T08:05:00,98.6,88,16,97,120,80,3,2,fever\n"
             "P2,A4,2151-06-01T00:10:00,101.2,110,22,93,100,60,,3,cellulitis\n");
  write_text(dir / "vitals.csv",
             "patient_id,admission_id,charttime,temperature,heartrate,resprate,o2sat,sbp,dbp,"
             "rhythm,pain\n"
             "P1,A1,2150-01-01T08:05:00,98.7,90,18,96,118,79,sinus,2\n"
             "P1,A2,2150-03-02T11:00:00,99,85,16,98,125,82,,\n");
  write_text(dir / "diagnoses.csv",
             "patient_id,admission_id,charttime,icd_code,icd_version,icd_title\n"
             "P1,A1,2150-01-01T09:00:00,L03115,10,Cellulitis of right lower limb\n"
             "P1,A1,2150-01-01T09:00:00,R509,10,Fever\n"
             "P3,A5,2150-01-01T01:00:00,A419,10,Sepsis\n");
  write_text(dir / "medications.csv",
             "patient_id,admission_id,charttime,name\n"
             "P1,A1,2150-01-01T10:00:00,Vancomycin\n"
             "P2,A4,2151-06-01T02:00:00,Cefazolin\n");
  write_text(dir / "dispense.csv",
             "patient_id,admission_id,charttime,name\n"
             "P1,A1,2150-01-01T10:30:00,Vancomycin 1g\n");
  write_text(dir / "susceptibility.csv",
             "admission_id,antibiotic,label\n"
             "A1,Clindamycin,1\n"
             "A1,Vancomycin,1\n"
             "A2,Oxacillin,0\n"
             "A4,Trimethoprim/sulfa,1\n"
             "A5,Erythromycin,0\n");
}

}  // namespace testing
