#include "rotcal/ingestion.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "rotcal/csv.hpp"

namespace rotcal {

namespace {

std::string to_upper(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::toupper(c); });
  return out;
}

void check_schema(const csv::Table& table, const std::vector<std::string>& schema) {
  for (const auto& col : schema) {
    if (table.column(col) < 0)
      throw DataError("schema error: missing column '" + col + "'");
  }
  if (table.header.size() != schema.size())
    throw DataError("schema error: expected " + std::to_string(schema.size()) +
                    " columns, found " + std::to_string(table.header.size()));
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (table.header[i] != schema[i])
      throw DataError("schema error: column " + std::to_string(i + 1) +
                      " is '" + table.header[i] + "', expected '" + schema[i] +
                      "'");
  }
}

void finish_rotation_means(LoadReport& report,
                           const std::map<std::string, double>& yield_sums) {
  for (const auto& [label, count] : report.rotation_counts) {
    const auto it = yield_sums.find(label);
    if (it != yield_sums.end() && count > 0)
      report.rotation_mean_yield[label] = it->second / count;
  }
}

}  // namespace

const std::vector<std::string> kObservationalSchema = {
    "pixel_id", "year", "rotation", "yield_tha", "lat", "lon", "gdd", "edd",
    "early_precip", "growing_precip", "prev_early_precip",
    "prev_growing_precip", "rootznaws", "aws0_100", "nccpi_corn", "nccpi_soy"};

const std::vector<std::string> kExperimentalSchema = {
    "site", "year", "replicate", "rotation", "tillage", "fertilizer",
    "drainage", "yield_tha", "rotation_start_year", "in_region"};

std::optional<RotationCategory> parse_rotation(std::string_view text) {
  const std::string u = to_upper(text);
  if (u == "CC") return RotationCategory::CC;
  if (u == "SC") return RotationCategory::SC;
  if (u == "SS") return RotationCategory::SS;
  if (u == "CS") return RotationCategory::CS;
  if (u == "OTHER") return RotationCategory::Other;
  return std::nullopt;
}

std::optional<Crop> parse_crop(std::string_view text) {
  const std::string u = to_upper(text);
  if (u == "CORN") return Crop::corn;
  if (u == "SOY") return Crop::soy;
  return std::nullopt;
}

bool has_tillage(std::string_view tillage_label) {
  const std::string u = to_upper(tillage_label);
  return !(u.empty() || u == "NONE" || u == "NO-TILL" || u == "NOTILL" ||
           u == "NO_TILL" || u == "0");
}

nlohmann::ordered_json LoadReport::to_json() const {
  nlohmann::ordered_json j;
  j["n_loaded"] = n_loaded;
  j["n_rejected"] = n_rejected;
  j["rotation_counts"] = rotation_counts;
  j["rotation_mean_yield"] = rotation_mean_yield;
  auto issues = [](const std::vector<RowIssue>& v) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& issue : v)
      arr.push_back({{"line", issue.line}, {"message", issue.message}});
    return arr;
  };
  j["errors"] = issues(errors);
  j["warnings"] = issues(warnings);
  return j;
}

ObservationalData load_observational(const std::string& path,
                                     const StudySpan& span) {
  const csv::Table table = csv::read_file(path);
  check_schema(table, kObservationalSchema);

  ObservationalData out;
  std::map<std::string, double> yield_sums;
  int line = 1;
  for (const auto& row : table.rows) {
    ++line;
    auto reject = [&](const std::string& why) {
      out.report.errors.push_back({line, why});
      ++out.report.n_rejected;
    };
    if (row.size() != kObservationalSchema.size()) {
      reject("wrong field count");
      continue;
    }

    ObservationalPixel px;
    px.pixel_id = row[0];
    const auto year = csv::parse_int(row[1]);
    if (!year) {
      reject("non-numeric year '" + row[1] + "'");
      continue;
    }
    px.year = static_cast<int>(*year);
    const auto rot = parse_rotation(row[2]);
    if (!rot) {
      reject("unknown rotation '" + row[2] + "'");
      continue;
    }
    px.rotation = *rot;
    px.estimation_eligible = (px.rotation != RotationCategory::Other);
    const auto yield = csv::parse_double(row[3]);
    if (!yield) {
      reject("non-numeric yield '" + row[3] + "'");
      continue;
    }
    px.yield_tha = *yield;

    // The year covariate comes from the year column; the remaining 12
    // covariates occupy the columns after yield_tha in fixed order.
    bool ok = true;
    for (int k = 0; k < kNumCovariates; ++k) {
      if (k == kYear) {
        px.x[kYear] = static_cast<double>(px.year);
        continue;
      }
      const int col = k < kYear ? 4 + k : 3 + k;
      const std::string& cell = row[col];
      if (cell.empty()) {
        reject(std::string("missing covariate '") + kCovariateNames[k] + "'");
        ok = false;
        break;
      }
      const auto v = csv::parse_double(cell);
      if (!v) {
        reject(std::string("non-numeric covariate '") + kCovariateNames[k] +
               "' = '" + cell + "'");
        ok = false;
        break;
      }
      px.x[k] = *v;
    }
    if (!ok) continue;

    if (px.yield_tha < 0.0) {
      reject("negative yield");
      continue;
    }
    if (px.year < span.first_year || px.year > span.last_year) {
      reject("year " + std::to_string(px.year) + " outside study span " +
             std::to_string(span.first_year) + "-" +
             std::to_string(span.last_year));
      continue;
    }
    if (px.x[kGdd] < 0.0 || px.x[kEdd] < 0.0) {
      reject("negative degree days");
      continue;
    }
    if (px.x[kEarlyPrecip] < 0.0 || px.x[kGrowingPrecip] < 0.0 ||
        px.x[kPrevEarlyPrecip] < 0.0 || px.x[kPrevGrowingPrecip] < 0.0) {
      reject("negative precipitation");
      continue;
    }

    const std::string label = to_string(px.rotation);
    out.report.rotation_counts[label] += 1;
    yield_sums[label] += px.yield_tha;
    ++out.report.n_loaded;
    out.pixels.push_back(std::move(px));
  }
  finish_rotation_means(out.report, yield_sums);
  return out;
}

// The covariate columns live in the pixel schema but not here; the pixel-id
// column does not exist here either, so the two loaders stay separate.
ExperimentalData load_experimental(const std::string& path) {
  const csv::Table table = csv::read_file(path);
  check_schema(table, kExperimentalSchema);

  ExperimentalData out;
  std::map<std::string, double> yield_sums;
  // full key -> first line seen, for duplicate warnings
  std::map<std::string, int> seen_keys;
  int line = 1;
  int row_id = 0;
  for (const auto& row : table.rows) {
    ++line;
    auto reject = [&](const std::string& why) {
      out.report.errors.push_back({line, why});
      ++out.report.n_rejected;
    };
    if (row.size() != kExperimentalSchema.size()) {
      reject("wrong field count");
      continue;
    }

    ExperimentalSubplot sp;
    sp.site = row[0];
    const auto year = csv::parse_int(row[1]);
    if (!year) {
      reject("non-numeric year '" + row[1] + "'");
      continue;
    }
    sp.year = static_cast<int>(*year);
    sp.replicate = row[2];
    const auto rot = parse_rotation(row[3]);
    if (!rot) {
      reject("unknown rotation '" + row[3] + "'");
      continue;
    }
    sp.rotation = *rot;
    sp.tillage = row[4];
    sp.fertilizer = row[5];
    sp.drainage = row[6];
    const auto yield = csv::parse_double(row[7]);
    if (!yield) {
      reject("non-numeric yield '" + row[7] + "'");
      continue;
    }
    sp.yield_tha = *yield;
    if (sp.yield_tha < 0.0) {
      reject("negative yield");
      continue;
    }
    const auto start = csv::parse_int(row[8]);
    if (!start) {
      reject("non-numeric rotation_start_year '" + row[8] + "'");
      continue;
    }
    sp.rotation_start_year = static_cast<int>(*start);
    if (sp.rotation_start_year > sp.year) {
      reject("rotation_start_year after observation year");
      continue;
    }
    const std::string flag = to_upper(row[9]);
    if (flag == "TRUE" || flag == "1") {
      sp.in_region = true;
    } else if (flag == "FALSE" || flag == "0") {
      sp.in_region = false;
    } else {
      reject("invalid in_region flag '" + row[9] + "'");
      continue;
    }

    const std::string key = sp.site + "|" + std::to_string(sp.year) + "|" +
                            sp.replicate + "|" + to_string(sp.rotation) + "|" +
                            sp.tillage + "|" + sp.fertilizer + "|" + sp.drainage;
    auto [it, inserted] = seen_keys.emplace(key, line);
    if (!inserted) {
      out.report.warnings.push_back(
          {line, "duplicate subplot key also at line " +
                     std::to_string(it->second)});
    }

    sp.row_id = row_id++;
    const std::string label = to_string(sp.rotation);
    out.report.rotation_counts[label] += 1;
    yield_sums[label] += sp.yield_tha;
    ++out.report.n_loaded;
    out.subplots.push_back(std::move(sp));
  }
  finish_rotation_means(out.report, yield_sums);
  return out;
}

nlohmann::ordered_json FilterResult::to_json() const {
  nlohmann::ordered_json j;
  j["n_kept"] = kept.size();
  j["n_excluded"] = excluded.size();
  nlohmann::ordered_json log = nlohmann::ordered_json::array();
  for (const auto& e : excluded) {
    log.push_back({{"row_id", e.row_id},
                   {"site", e.site},
                   {"year", e.year},
                   {"rule", e.rule}});
  }
  j["exclusions"] = log;
  j["warnings"] = warnings;
  return j;
}

FilterResult apply_experiment_filters(
    const std::vector<ExperimentalSubplot>& subplots, Crop crop,
    const FilterOptions& options) {
  FilterResult result;

  // Rules fire in a fixed order so each dropped row carries exactly one rule.
  // Site-level rules are evaluated on the rows surviving the earlier rules.
  std::vector<const ExperimentalSubplot*> current;
  current.reserve(subplots.size());
  for (const auto& sp : subplots) current.push_back(&sp);

  auto drop_if = [&](auto&& predicate, const std::string& rule) {
    std::vector<const ExperimentalSubplot*> next;
    next.reserve(current.size());
    for (const auto* sp : current) {
      if (predicate(*sp)) {
        result.excluded.push_back({sp->row_id, sp->site, sp->year, rule});
      } else {
        next.push_back(sp);
      }
    }
    current = std::move(next);
  };

  // (i) fertilizer: sites where no subplot uses fertilizer drop entirely;
  // elsewhere only the zero-fertilizer subplots drop.
  {
    std::set<std::string> fertilized_sites;
    for (const auto* sp : current)
      if (!is_zero_fertilizer(*sp)) fertilized_sites.insert(sp->site);
    drop_if(
        [&](const ExperimentalSubplot& sp) {
          return !fertilized_sites.count(sp.site);
        },
        "site_never_fertilized");
    drop_if([](const ExperimentalSubplot& sp) { return is_zero_fertilizer(sp); },
            "zero_fertilizer_subplot");
  }

  // (ii) outside the study region (precomputed 50 km flag).
  drop_if([](const ExperimentalSubplot& sp) { return !sp.in_region; },
          "outside_region");

  // Study-period and first-year exclusions before the rotation-presence rule,
  // so a site is not kept alive by rows that are themselves ineligible.
  drop_if(
      [&](const ExperimentalSubplot& sp) {
        return sp.year < options.study_start_year;
      },
      "before_study_start");
  drop_if(
      [](const ExperimentalSubplot& sp) {
        return sp.year <= sp.rotation_start_year;
      },
      "rotation_first_year");

  // (iii) the site must contain both the treated and control rotations for
  // the crop. The literal variant keeps the source text's CS+CC pair for corn.
  {
    RotationCategory need_a = treated_rotation(crop);
    const RotationCategory need_b = control_rotation(crop);
    if (crop == Crop::corn && options.literal_cs_cc)
      need_a = RotationCategory::CS;

    std::set<std::string> has_a, has_b;
    for (const auto* sp : current) {
      if (sp->rotation == need_a) has_a.insert(sp->site);
      if (sp->rotation == need_b) has_b.insert(sp->site);
    }
    const std::string rule = std::string("site_missing_") + to_string(need_a) +
                             "_or_" + to_string(need_b);
    drop_if(
        [&](const ExperimentalSubplot& sp) {
          return !(has_a.count(sp.site) && has_b.count(sp.site));
        },
        rule);
  }

  if (current.empty())
    result.warnings.push_back("all subplots excluded by filters");

  result.kept.reserve(current.size());
  for (const auto* sp : current) result.kept.push_back(*sp);
  return result;
}

void write_observational(const std::string& path,
                         const std::vector<ObservationalPixel>& pixels) {
  csv::Writer out(path);
  out.row(kObservationalSchema);
  for (const auto& px : pixels) {
    std::vector<std::string> row;
    row.reserve(kObservationalSchema.size());
    row.push_back(px.pixel_id);
    row.push_back(std::to_string(px.year));
    row.push_back(to_string(px.rotation));
    row.push_back(csv::format_double(px.yield_tha));
    for (int k = 0; k < kNumCovariates; ++k) {
      if (k == kYear) continue;  // carried by the year column
      row.push_back(csv::format_double(px.x[k]));
    }
    out.row(row);
  }
}

void write_experimental(const std::string& path,
                        const std::vector<ExperimentalSubplot>& subplots) {
  csv::Writer out(path);
  out.row(kExperimentalSchema);
  for (const auto& sp : subplots) {
    out.row({sp.site, std::to_string(sp.year), sp.replicate,
             to_string(sp.rotation), sp.tillage, sp.fertilizer, sp.drainage,
             csv::format_double(sp.yield_tha),
             std::to_string(sp.rotation_start_year),
             sp.in_region ? "true" : "false"});
  }
}

}  // namespace rotcal
