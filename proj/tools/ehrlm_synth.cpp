// SPDX-License-Identifier: Apache-2.0
//
// Writes a synthetic EHR table set plus a scientific-style document file,
// the layout `ehrlm ingest` and `ehrlm pipeline` expect.
#include <iostream>

#include <CLI11.hpp>

#include "ehrlm/error.hpp"
#include "ehrlm/synth.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate the synthetic desk dataset"};
  std::string out_dir = "data/desk";
  ehrlm::synth::EhrOptions opt;
  std::size_t sci_docs = 500;
  app.add_option("--out-dir", out_dir, "Output directory");
  app.add_option("--patients", opt.patients, "Number of patients");
  app.add_option("--multi-encounter", opt.multi_encounter_fraction, "Share of patients with several encounters");
  app.add_option("--sci-docs", sci_docs, "Number of scientific-style documents");
  app.add_option("--seed", opt.seed, "Seed");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto data = ehrlm::synth::make_ehr(opt);
    ehrlm::write_tables(data, out_dir);
    ehrlm::write_jsonl(ehrlm::synth::make_sci_docs(sci_docs, opt.seed), std::filesystem::path(out_dir) / "sci_docs.jsonl");
    std::cout << data.patients.size() << " patients, " << data.encounter_count() << " encounters, " << sci_docs
              << " documents -> " << out_dir << "\n";
  } catch (const ehrlm::Error& e) {
    std::cerr << e.module() << ": " << e.name() << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
