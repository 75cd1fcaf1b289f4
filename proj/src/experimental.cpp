#include "rotcal/experimental.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "rotcal/errors.hpp"

namespace rotcal {

namespace {

// Two-sided 95% t critical values, df = 1..30; normal quantile past 30.
constexpr double kT95[30] = {
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
    2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
    2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};

struct Key {
  std::string site;
  int year;
  std::string replicate, tillage, fertilizer, drainage;
  auto operator<=>(const Key&) const = default;
};

}  // namespace

double critical_value_95(int df) {
  if (df < 1) return std::numeric_limits<double>::quiet_NaN();
  if (df > 30) return 1.959964;
  return kT95[df - 1];
}

PairingResult pair_subplots(const std::vector<ExperimentalSubplot>& subplots,
                            Crop crop) {
  const RotationCategory treated = treated_rotation(crop);
  const RotationCategory control = control_rotation(crop);

  std::map<Key, std::pair<std::vector<const ExperimentalSubplot*>,
                          std::vector<const ExperimentalSubplot*>>>
      groups;
  PairingResult result;

  for (const auto& sp : subplots) {
    if (sp.rotation != treated && sp.rotation != control) {
      result.unmatched_row_ids.push_back(sp.row_id);
      continue;
    }
    Key key{sp.site, sp.year, sp.replicate, sp.tillage, sp.fertilizer,
            sp.drainage};
    auto& bucket = groups[key];
    (sp.rotation == treated ? bucket.first : bucket.second).push_back(&sp);
  }

  // Within a key group, candidates pair positionally in ascending
  // (yield, row_id) order; the ordering is content-based so the resulting
  // effects do not depend on input row order.
  auto by_content = [](const ExperimentalSubplot* a,
                       const ExperimentalSubplot* b) {
    if (a->yield_tha != b->yield_tha) return a->yield_tha < b->yield_tha;
    return a->row_id < b->row_id;
  };

  std::map<std::pair<std::string, int>, int> pair_counter;
  for (auto& [key, bucket] : groups) {
    auto& [treated_list, control_list] = bucket;
    std::sort(treated_list.begin(), treated_list.end(), by_content);
    std::sort(control_list.begin(), control_list.end(), by_content);
    if (treated_list.size() > 1 || control_list.size() > 1) {
      result.notes.push_back(
          "multiple candidates at site=" + key.site + " year=" +
          std::to_string(key.year) + " replicate=" + key.replicate +
          "; paired in ascending subplot order");
    }
    const std::size_t n = std::min(treated_list.size(), control_list.size());
    for (std::size_t k = 0; k < n; ++k) {
      PairedDifference pd;
      pd.site = key.site;
      pd.year = key.year;
      pd.pair_index = ++pair_counter[{key.site, key.year}];
      pd.treated_yield = treated_list[k]->yield_tha;
      pd.control_yield = control_list[k]->yield_tha;
      pd.effect = pd.treated_yield - pd.control_yield;
      pd.replicate = key.replicate;
      pd.tillage = key.tillage;
      pd.fertilizer = key.fertilizer;
      pd.drainage = key.drainage;
      result.pairs.push_back(std::move(pd));
    }
    for (std::size_t k = n; k < treated_list.size(); ++k)
      result.unmatched_row_ids.push_back(treated_list[k]->row_id);
    for (std::size_t k = n; k < control_list.size(); ++k)
      result.unmatched_row_ids.push_back(control_list[k]->row_id);
  }
  std::sort(result.unmatched_row_ids.begin(), result.unmatched_row_ids.end());
  return result;
}

nlohmann::ordered_json PairingResult::to_json() const {
  nlohmann::ordered_json j;
  j["n_pairs"] = pairs.size();
  j["unmatched_row_ids"] = unmatched_row_ids;
  j["notes"] = notes;
  return j;
}

SiteYearSummary site_year_means(const std::vector<PairedDifference>& pairs) {
  if (pairs.empty()) throw DataError("site_year_means: no pairs");

  // site -> year -> effects
  std::map<std::string, std::map<int, std::vector<double>>> by_site;
  for (const auto& p : pairs) by_site[p.site][p.year].push_back(p.effect);

  SiteYearSummary summary;
  for (const auto& [site, years] : by_site) {
    // Pooled within-site residual SD across the site's years.
    double ss = 0.0;
    int df = 0;
    for (const auto& [year, effects] : years) {
      const int n = static_cast<int>(effects.size());
      double mean = 0.0;
      for (const double e : effects) mean += e;
      mean /= n;
      for (const double e : effects) ss += (e - mean) * (e - mean);
      df += n - 1;
    }
    const bool pooled_defined = df >= 1;
    const double pooled_sd = pooled_defined ? std::sqrt(ss / df) : 0.0;
    const double crit = critical_value_95(df);

    SiteEffect site_row;
    site_row.site = site;
    site_row.n_years = static_cast<int>(years.size());
    std::vector<double> all_effects;

    for (const auto& [year, effects] : years) {
      SiteYearEffect row;
      row.site = site;
      row.year = year;
      row.n_pairs = static_cast<int>(effects.size());
      double mean = 0.0;
      for (const double e : effects) mean += e;
      mean /= row.n_pairs;
      row.mean_effect = mean;
      row.se_defined = pooled_defined;
      if (pooled_defined) {
        row.se = pooled_sd / std::sqrt(static_cast<double>(row.n_pairs));
        row.ci_low = mean - crit * row.se;
        row.ci_high = mean + crit * row.se;
      } else {
        row.se = std::numeric_limits<double>::quiet_NaN();
        row.ci_low = row.ci_high = std::numeric_limits<double>::quiet_NaN();
      }
      summary.site_years.push_back(std::move(row));
      all_effects.insert(all_effects.end(), effects.begin(), effects.end());
    }

    // Site-level mean across all pairs with unpooled site-specific SE.
    const int n = static_cast<int>(all_effects.size());
    double mean = 0.0;
    for (const double e : all_effects) mean += e;
    mean /= n;
    site_row.mean_effect = mean;
    site_row.n_pairs = n;
    if (n >= 2) {
      double ss_site = 0.0;
      for (const double e : all_effects) ss_site += (e - mean) * (e - mean);
      const double sd = std::sqrt(ss_site / (n - 1));
      site_row.se = sd / std::sqrt(static_cast<double>(n));
      const double c = critical_value_95(n - 1);
      site_row.ci_low = mean - c * site_row.se;
      site_row.ci_high = mean + c * site_row.se;
    } else {
      site_row.se_defined = false;
      site_row.se = std::numeric_limits<double>::quiet_NaN();
      site_row.ci_low = site_row.ci_high =
          std::numeric_limits<double>::quiet_NaN();
    }
    summary.sites.push_back(std::move(site_row));
  }
  return summary;
}

nlohmann::ordered_json SiteYearSummary::to_json() const {
  auto number_or_null = [](double v) -> nlohmann::ordered_json {
    if (std::isnan(v)) return nullptr;
    return v;
  };
  nlohmann::ordered_json j;
  nlohmann::ordered_json site_year_rows = nlohmann::ordered_json::array();
  for (const auto& r : site_years) {
    site_year_rows.push_back({{"site", r.site},
                              {"year", r.year},
                              {"mean_effect", r.mean_effect},
                              {"se", number_or_null(r.se)},
                              {"se_defined", r.se_defined},
                              {"n_pairs", r.n_pairs},
                              {"ci_low", number_or_null(r.ci_low)},
                              {"ci_high", number_or_null(r.ci_high)}});
  }
  nlohmann::ordered_json site_rows = nlohmann::ordered_json::array();
  for (const auto& r : sites) {
    site_rows.push_back({{"site", r.site},
                         {"mean_effect", r.mean_effect},
                         {"se", number_or_null(r.se)},
                         {"se_defined", r.se_defined},
                         {"n_pairs", r.n_pairs},
                         {"n_years", r.n_years},
                         {"ci_low", number_or_null(r.ci_low)},
                         {"ci_high", number_or_null(r.ci_high)}});
  }
  j["site_years"] = site_year_rows;
  j["sites"] = site_rows;
  return j;
}

}  // namespace rotcal
