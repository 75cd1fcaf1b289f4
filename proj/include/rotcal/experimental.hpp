#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "rotcal/types.hpp"

namespace rotcal {

// One matched (treated, control) yield difference. The effect is the treated
// yield minus the control yield, exactly.
struct PairedDifference {
  std::string site;
  int year = 0;
  int pair_index = 0;  // ordinal within (site, year)
  double treated_yield = 0.0;
  double control_yield = 0.0;
  double effect = 0.0;
  // management key the pair was matched on
  std::string replicate;
  std::string tillage;
  std::string fertilizer;
  std::string drainage;
};

struct PairingResult {
  std::vector<PairedDifference> pairs;
  std::vector<int> unmatched_row_ids;  // subplots left without a partner
  std::vector<std::string> notes;      // e.g. tie-broken multi-candidate keys

  nlohmann::ordered_json to_json() const;
};

// Matches treated-rotation subplots to control-rotation subplots on identical
// (site, year, replicate, tillage, fertilizer, drainage); each subplot joins
// at most one pair. Ties among equal-key candidates pair in ascending
// subplot-id order, with a determinism note.
PairingResult pair_subplots(const std::vector<ExperimentalSubplot>& subplots,
                            Crop crop);

struct SiteYearEffect {
  std::string site;
  int year = 0;
  double mean_effect = 0.0;
  double se = 0.0;        // pooled within site across its years
  bool se_defined = true; // false when the site has no df for pooling
  int n_pairs = 0;
  double ci_low = 0.0, ci_high = 0.0;
};

struct SiteEffect {
  std::string site;
  double mean_effect = 0.0;  // across all pairs at the site
  double se = 0.0;           // unpooled, site-specific
  bool se_defined = true;
  int n_pairs = 0;
  int n_years = 0;
  double ci_low = 0.0, ci_high = 0.0;
};

struct SiteYearSummary {
  std::vector<SiteYearEffect> site_years;  // pooled-SE convention
  std::vector<SiteEffect> sites;           // unpooled site-level convention

  nlohmann::ordered_json to_json() const;
};

// Per site-year means with per-site pooled standard errors, plus per-site
// across-year means with unpooled SEs. 95% intervals are t-based on the
// pooling degrees of freedom, switching to the normal quantile past 30 df.
SiteYearSummary site_year_means(const std::vector<PairedDifference>& pairs);

// Upper-tail critical value used for the 95% intervals.
double critical_value_95(int df);

}  // namespace rotcal
