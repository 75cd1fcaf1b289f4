#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "rotcal/types.hpp"

namespace rotcal {

struct RowIssue {
  int line = 0;  // 1-based line number in the source file
  std::string message;
};

// Per-load validation report; rotation counts and mean yields follow the
// category summary table format.
struct LoadReport {
  std::map<std::string, int> rotation_counts;
  std::map<std::string, double> rotation_mean_yield;
  int n_loaded = 0;
  int n_rejected = 0;
  std::vector<RowIssue> errors;
  std::vector<RowIssue> warnings;

  nlohmann::ordered_json to_json() const;
};

struct StudySpan {
  int first_year = 2000;
  int last_year = 2018;
};

struct ObservationalData {
  std::vector<ObservationalPixel> pixels;
  LoadReport report;
};

// Loads the observational pixel table. Malformed rows are rejected with a
// line-numbered error and do not stop the load; a wrong header does.
// Rows with rotation OTHER load but are flagged estimation-ineligible.
ObservationalData load_observational(const std::string& path,
                                     const StudySpan& span = {});

struct ExperimentalData {
  std::vector<ExperimentalSubplot> subplots;
  LoadReport report;
};

// Loads subplots unfiltered; inclusion rules are a separate step.
ExperimentalData load_experimental(const std::string& path);

struct ExclusionEntry {
  int row_id = 0;
  std::string site;
  int year = 0;
  std::string rule;  // exactly one rule per dropped row
};

struct FilterOptions {
  int study_start_year = 2000;
  // The corn inclusion rule requires the site to contain both the treated
  // and control rotations (SC and CC). The literal reading of the source
  // criterion (CS and CC) is available behind this switch.
  bool literal_cs_cc = false;
};

struct FilterResult {
  std::vector<ExperimentalSubplot> kept;
  std::vector<ExclusionEntry> excluded;
  std::vector<std::string> warnings;

  nlohmann::ordered_json to_json() const;
};

FilterResult apply_experiment_filters(
    const std::vector<ExperimentalSubplot>& subplots, Crop crop,
    const FilterOptions& options = {});

// Writers matching the loaders' schemas (round-trip exact).
void write_observational(const std::string& path,
                         const std::vector<ObservationalPixel>& pixels);
void write_experimental(const std::string& path,
                        const std::vector<ExperimentalSubplot>& subplots);

extern const std::vector<std::string> kObservationalSchema;
extern const std::vector<std::string> kExperimentalSchema;

}  // namespace rotcal
