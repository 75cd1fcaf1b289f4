#include "rotcal/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "rotcal/csv.hpp"
#include "rotcal/errors.hpp"
#include "rotcal/rng.hpp"

namespace rotcal {

namespace {

// Location/scale of each covariate draw. Uniform draws report the implied
// moments so z-standardization is well defined everywhere.
struct DrawSpec {
  enum class Kind { uniform, truncated_normal };
  Kind kind;
  double a, b;  // uniform bounds, or (mean, sd)
};

const DrawSpec kDraws[kNumCovariates] = {
    {DrawSpec::Kind::uniform, 38.0, 47.0},            // lat
    {DrawSpec::Kind::uniform, -104.0, -82.0},         // lon
    {DrawSpec::Kind::uniform, 2000.0, 2018.0},        // year (integer draw)
    {DrawSpec::Kind::truncated_normal, 2600.0, 300.0},// gdd
    {DrawSpec::Kind::truncated_normal, 45.0, 25.0},   // edd
    {DrawSpec::Kind::truncated_normal, 250.0, 80.0},  // early precip
    {DrawSpec::Kind::truncated_normal, 500.0, 120.0}, // growing precip
    {DrawSpec::Kind::truncated_normal, 250.0, 80.0},  // prev early precip
    {DrawSpec::Kind::truncated_normal, 500.0, 120.0}, // prev growing precip
    {DrawSpec::Kind::truncated_normal, 280.0, 60.0},  // rootznaws
    {DrawSpec::Kind::truncated_normal, 160.0, 40.0},  // aws 0-100
    {DrawSpec::Kind::uniform, 0.2, 0.9},              // nccpi corn
    {DrawSpec::Kind::uniform, 0.2, 0.9},              // nccpi soy
};

double standard_normal_cdf(double z) {
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

double z_of(const Covariates& x, int index) {
  return (x[index] - generator_mean(index)) / generator_sd(index);
}

// Weather and soil fields for one row; year comes from the caller.
Covariates draw_covariates(Rng& rng, int year) {
  Covariates x;
  for (int k = 0; k < kNumCovariates; ++k) {
    if (k == kYear) {
      x[k] = static_cast<double>(year);
      continue;
    }
    const auto& spec = kDraws[k];
    if (spec.kind == DrawSpec::Kind::uniform) {
      x[k] = rng.uniform(spec.a, spec.b);
    } else {
      x[k] = std::max(0.0, rng.normal(spec.a, spec.b));
    }
  }
  return x;
}

}  // namespace

double generator_mean(int covariate_index) {
  const auto& spec = kDraws[covariate_index];
  if (spec.kind == DrawSpec::Kind::uniform) return 0.5 * (spec.a + spec.b);
  return spec.a;
}

double generator_sd(int covariate_index) {
  const auto& spec = kDraws[covariate_index];
  if (spec.kind == DrawSpec::Kind::uniform)
    return (spec.b - spec.a) / std::sqrt(12.0);
  return spec.b;
}

double simulated_baseline_yield(const Covariates& x) {
  const double z_gdd = z_of(x, kGdd);
  const double z_edd = z_of(x, kEdd);
  const double z_gp = z_of(x, kGrowingPrecip);
  const double z_ep = z_of(x, kEarlyPrecip);
  const double z_rz = z_of(x, kRootznaws);
  return 6.0 + 1.5 * z_gdd - 0.8 * z_edd + 0.8 * z_gp - 0.3 * z_gp * z_gp +
         0.4 * z_ep + 1.2 * x[kNccpiCorn] + 0.5 * z_rz;
}

double true_tau_at(const TauSpec& spec, const Covariates& x) {
  switch (spec.kind) {
    case TauSpec::Kind::constant:
      return spec.p0;
    case TauSpec::Kind::linear_gdd:
      return spec.p0 + spec.p1 * z_of(x, kGdd);
    case TauSpec::Kind::two_stratum:
      return x[kGdd] > generator_mean(kGdd) ? spec.p1 : spec.p0;
  }
  return spec.p0;
}

std::string TauSpec::to_string() const {
  std::ostringstream out;
  switch (kind) {
    case Kind::constant: out << "constant:" << p0; break;
    case Kind::linear_gdd: out << "linear_gdd:" << p0 << ':' << p1; break;
    case Kind::two_stratum: out << "two_stratum:" << p0 << ':' << p1; break;
  }
  return out.str();
}

TauSpec TauSpec::parse(const std::string& text) {
  TauSpec spec;
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(':', start);
    if (pos == std::string::npos) {
      parts.push_back(text.substr(start));
      break;
    }
    parts.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
  if (parts.empty()) throw ConfigError("empty tau spec");
  auto need = [&](std::size_t k) {
    if (parts.size() != k + 1)
      throw ConfigError("tau spec '" + text + "' needs " + std::to_string(k) +
                        " parameter(s)");
  };
  auto num = [&](std::size_t i) {
    const auto v = csv::parse_double(parts[i]);
    if (!v) throw ConfigError("bad tau parameter '" + parts[i] + "'");
    return *v;
  };
  if (parts[0] == "constant") {
    spec.kind = Kind::constant;
    need(1);
    spec.p0 = num(1);
  } else if (parts[0] == "linear_gdd") {
    spec.kind = Kind::linear_gdd;
    need(2);
    spec.p0 = num(1);
    spec.p1 = num(2);
  } else if (parts[0] == "two_stratum") {
    spec.kind = Kind::two_stratum;
    need(2);
    spec.p0 = num(1);
    spec.p1 = num(2);
  } else {
    throw ConfigError("unknown tau spec kind '" + parts[0] + "'");
  }
  return spec;
}

void SimulationConfig::validate() const {
  if (n_pixels < 1) throw ConfigError("n_pixels must be >= 1");
  if (n_sites < 1) throw ConfigError("n_sites must be >= 1");
  if (site_years.empty()) throw ConfigError("site_years must not be empty");
  if (static_cast<int>(site_years.size()) != n_sites && site_years.size() != 1)
    throw ConfigError("site_years must list one duration or one per site");
  for (const int d : site_years)
    if (d < 1) throw ConfigError("site durations must be >= 1");
  if (pairs_per_site_year < 1)
    throw ConfigError("pairs_per_site_year must be >= 1");
  if (!(misclass_eps >= 0.0 && misclass_eps < 0.5))
    throw ConfigError("misclass_eps must be in [0, 0.5)");
  if (!(propensity_skew >= 0.0 && propensity_skew < 1.0))
    throw ConfigError("propensity_skew must be in [0, 1)");
  if (yield_noise_obs < 0 || yield_noise_exp < 0 || site_sd < 0 || year_sd < 0)
    throw ConfigError("noise standard deviations must be >= 0");
}

SimulationOutput simulate(const SimulationConfig& config) {
  config.validate();

  const RotationCategory rot_treated = treated_rotation(config.crop);
  const RotationCategory rot_control = control_rotation(config.crop);
  SimulationOutput out;

  // ---- observational panel ----
  {
    Rng rng(derive_seed(config.seed, 0x0b5ull));
    out.pixels.reserve(static_cast<std::size_t>(config.n_pixels));
    out.true_w.reserve(static_cast<std::size_t>(config.n_pixels));
    out.true_tau.reserve(static_cast<std::size_t>(config.n_pixels));
    for (int i = 0; i < config.n_pixels; ++i) {
      const int year =
          config.first_year + static_cast<int>(rng.below(19));
      ObservationalPixel px;
      px.pixel_id = "px" + std::to_string(i);
      px.year = year;
      px.x = draw_covariates(rng, year);

      double p_treat = 0.5;
      if (config.propensity_skew > 0.0) {
        // One-sided overlap deficiency: probabilities rise toward 1 with
        // gdd but never fall toward 0.
        p_treat = 0.5 + 0.5 * config.propensity_skew *
                            standard_normal_cdf(z_of(px.x, kGdd));
      }
      const int w_true = rng.bernoulli(p_treat) ? 1 : 0;
      const double p_reduced =
          0.5 + (w_true == 1 ? config.confounder_assoc : -config.confounder_assoc);
      const int fertilizer_full = rng.bernoulli(p_reduced) ? 0 : 1;
      const double tau = true_tau_at(config.tau, px.x);

      double y = simulated_baseline_yield(px.x) + w_true * tau +
                 config.confounder_gamma * fertilizer_full +
                 rng.normal(0.0, config.yield_noise_obs);
      y = std::max(0.0, y);
      px.yield_tha = y;

      int w_recorded = w_true;
      if (config.misclass_eps > 0.0 && rng.bernoulli(config.misclass_eps))
        w_recorded = 1 - w_recorded;
      px.rotation = w_recorded == 1 ? rot_treated : rot_control;

      out.pixels.push_back(std::move(px));
      out.true_w.push_back(w_true);
      out.true_tau.push_back(tau);
    }
  }

  // ---- experiments ----
  {
    Rng rng(derive_seed(config.seed, 0xe24ull));
    std::vector<int> durations = config.site_years;
    if (durations.size() == 1)
      durations.assign(static_cast<std::size_t>(config.n_sites), durations[0]);

    // Year effects are crossed across sites: one draw per calendar year.
    std::vector<double> year_effect(19);
    for (auto& b : year_effect) b = rng.normal(0.0, config.year_sd);

    for (int s = 0; s < config.n_sites; ++s) {
      const std::string site = "site" + std::to_string(s + 1);
      const double site_effect = rng.normal(0.0, config.site_sd);
      const int duration = durations[static_cast<std::size_t>(s)];
      // Stagger start years so short experiments spread over the period.
      const int max_start = 19 - duration;
      const int start_offset =
          max_start <= 0 ? 0 : (s * 3) % (max_start + 1);
      const std::string tillage = (s % 2 == 0) ? "till" : "none";
      // Static soil fields are drawn once per site. Sites also carry a
      // persistent thermal center: year-to-year weather varies around it,
      // so a site's expected effect differs from its neighbours' the way a
      // climate gradient would make it. The marginal spread stays inside
      // the pixel panel's covariate support.
      const Covariates site_soil = draw_covariates(rng, config.first_year);
      const double site_gdd_center =
          std::max(0.0, rng.normal(generator_mean(kGdd),
                                   (2.0 / 3.0) * generator_sd(kGdd)));

      for (int t = 0; t < duration; ++t) {
        const int year = config.first_year + start_offset + t;
        Covariates x = draw_covariates(rng, year);
        x[kGdd] = std::max(0.0, rng.normal(site_gdd_center,
                                           0.5 * generator_sd(kGdd)));
        x[kLatitude] = site_soil[kLatitude];
        x[kLongitude] = site_soil[kLongitude];
        x[kRootznaws] = site_soil[kRootznaws];
        x[kAws0To100] = site_soil[kAws0To100];
        x[kNccpiCorn] = site_soil[kNccpiCorn];
        x[kNccpiSoy] = site_soil[kNccpiSoy];

        out.exp_covariates.push_back({site, year, x});

        const double tau = true_tau_at(config.tau, x);
        const double base = simulated_baseline_yield(x) + site_effect +
                            year_effect[static_cast<std::size_t>(
                                start_offset + t)];
        for (int j = 0; j < config.pairs_per_site_year; ++j) {
          const std::string replicate = "r" + std::to_string(j + 1);
          auto make = [&](RotationCategory rot, int w) {
            ExperimentalSubplot sp;
            sp.site = site;
            sp.year = year;
            sp.replicate = replicate;
            sp.rotation = rot;
            sp.tillage = tillage;
            sp.fertilizer = "1";
            sp.drainage = "standard";
            sp.yield_tha = std::max(
                0.0, base + w * tau + rng.normal(0.0, config.yield_noise_exp));
            sp.rotation_start_year = config.first_year + start_offset - 1;
            sp.in_region = true;
            sp.row_id = static_cast<int>(out.subplots.size());
            out.subplots.push_back(std::move(sp));
          };
          make(rot_treated, 1);
          make(rot_control, 0);
        }
      }
    }
  }

  // ---- analytic truth ----
  out.truth.tau = config.tau;
  double tau_sum = 0.0;
  for (const double t : out.true_tau) tau_sum += t;
  out.truth.true_ate = tau_sum / static_cast<double>(out.true_tau.size());
  out.truth.expected_confounding_bias =
      -2.0 * config.confounder_gamma * config.confounder_assoc;
  out.truth.expected_attenuation = 1.0 - 2.0 * config.misclass_eps;
  out.truth.implied_b = 1.0 / out.truth.expected_attenuation;
  out.truth.implied_a = 2.0 * config.confounder_gamma * config.confounder_assoc;
  return out;
}

SimulationConfig paper_like_benchmark_config(std::uint64_t seed, double scale) {
  if (!(scale > 0.0 && scale <= 1.0))
    throw ConfigError("benchmark scale must be in (0, 1]");
  SimulationConfig config;
  config.crop = Crop::corn;
  config.n_pixels = std::max(500, static_cast<int>(std::lround(180000 * scale)));
  config.n_sites = 11;
  config.site_years = {15, 15, 15, 15, 4, 4, 4, 4, 4, 4, 4};
  config.pairs_per_site_year = 3;
  config.tau = TauSpec{TauSpec::Kind::linear_gdd, 1.0, -0.35};
  config.confounder_gamma = 0.6;
  config.confounder_assoc = 0.25;
  config.misclass_eps = 0.15;
  config.propensity_skew = 0.0;
  config.yield_noise_obs = 1.2;
  config.yield_noise_exp = 0.45;
  config.site_sd = 0.25;
  config.year_sd = 0.15;
  config.first_year = 2000;
  config.seed = seed;
  return config;
}

// ---------------------------------------------------------------------------
// Config and truth serialization
// ---------------------------------------------------------------------------

nlohmann::ordered_json SimulationConfig::to_json() const {
  return {{"crop", rotcal::to_string(crop)},
          {"n_pixels", n_pixels},
          {"n_sites", n_sites},
          {"site_years", site_years},
          {"pairs_per_site_year", pairs_per_site_year},
          {"tau", tau.to_string()},
          {"confounder_gamma", confounder_gamma},
          {"confounder_assoc", confounder_assoc},
          {"misclass_eps", misclass_eps},
          {"propensity_skew", propensity_skew},
          {"yield_noise_obs", yield_noise_obs},
          {"yield_noise_exp", yield_noise_exp},
          {"site_sd", site_sd},
          {"year_sd", year_sd},
          {"first_year", first_year},
          {"seed", seed}};
}

std::string SimulationConfig::to_kv_string() const {
  std::ostringstream out;
  out << "crop = " << rotcal::to_string(crop) << '\n';
  out << "n_pixels = " << n_pixels << '\n';
  out << "n_sites = " << n_sites << '\n';
  out << "site_years = ";
  for (std::size_t i = 0; i < site_years.size(); ++i) {
    if (i) out << ',';
    out << site_years[i];
  }
  out << '\n';
  out << "pairs_per_site_year = " << pairs_per_site_year << '\n';
  out << "tau = " << tau.to_string() << '\n';
  out << "confounder_gamma = " << csv::format_double(confounder_gamma) << '\n';
  out << "confounder_assoc = " << csv::format_double(confounder_assoc) << '\n';
  out << "misclass_eps = " << csv::format_double(misclass_eps) << '\n';
  out << "propensity_skew = " << csv::format_double(propensity_skew) << '\n';
  out << "yield_noise_obs = " << csv::format_double(yield_noise_obs) << '\n';
  out << "yield_noise_exp = " << csv::format_double(yield_noise_exp) << '\n';
  out << "site_sd = " << csv::format_double(site_sd) << '\n';
  out << "year_sd = " << csv::format_double(year_sd) << '\n';
  out << "first_year = " << first_year << '\n';
  out << "seed = " << seed << '\n';
  return out.str();
}

SimulationConfig SimulationConfig::from_kv_string(const std::string& text) {
  SimulationConfig config;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    auto as_double = [&] {
      const auto v = csv::parse_double(value);
      if (!v)
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": bad number '" + value + "'");
      return *v;
    };
    auto as_int = [&] {
      const auto v = csv::parse_int(value);
      if (!v)
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": bad integer '" + value + "'");
      return static_cast<int>(*v);
    };

    if (key == "crop") {
      const auto crop = parse_crop(value);
      if (!crop)
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": unknown crop '" + value + "'");
      config.crop = *crop;
    } else if (key == "n_pixels") {
      config.n_pixels = as_int();
    } else if (key == "n_sites") {
      config.n_sites = as_int();
    } else if (key == "site_years") {
      config.site_years.clear();
      std::size_t start = 0;
      while (start <= value.size()) {
        const auto pos = value.find(',', start);
        const std::string part =
            value.substr(start, pos == std::string::npos ? std::string::npos
                                                         : pos - start);
        const auto v = csv::parse_int(part);
        if (!v)
          throw ConfigError("config line " + std::to_string(line_no) +
                            ": bad site_years entry '" + part + "'");
        config.site_years.push_back(static_cast<int>(*v));
        if (pos == std::string::npos) break;
        start = pos + 1;
      }
    } else if (key == "pairs_per_site_year") {
      config.pairs_per_site_year = as_int();
    } else if (key == "tau") {
      config.tau = TauSpec::parse(value);
    } else if (key == "confounder_gamma") {
      config.confounder_gamma = as_double();
    } else if (key == "confounder_assoc") {
      config.confounder_assoc = as_double();
    } else if (key == "misclass_eps") {
      config.misclass_eps = as_double();
    } else if (key == "propensity_skew") {
      config.propensity_skew = as_double();
    } else if (key == "yield_noise_obs") {
      config.yield_noise_obs = as_double();
    } else if (key == "yield_noise_exp") {
      config.yield_noise_exp = as_double();
    } else if (key == "site_sd") {
      config.site_sd = as_double();
    } else if (key == "year_sd") {
      config.year_sd = as_double();
    } else if (key == "first_year") {
      config.first_year = as_int();
    } else if (key == "seed") {
      const auto v = csv::parse_int(value);
      if (!v)
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": bad seed '" + value + "'");
      config.seed = static_cast<std::uint64_t>(*v);
    } else {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": unknown key '" + key + "'");
    }
  }
  config.validate();
  return config;
}

SimulationConfig SimulationConfig::from_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return from_kv_string(buffer.str());
}

nlohmann::ordered_json SimulatedTruth::to_json() const {
  return {{"tau", tau.to_string()},
          {"true_ate", true_ate},
          {"expected_confounding_bias", expected_confounding_bias},
          {"expected_attenuation", expected_attenuation},
          {"implied_a", implied_a},
          {"implied_b", implied_b}};
}

// ---------------------------------------------------------------------------
// Experiment covariate file
// ---------------------------------------------------------------------------

void write_exp_covariates(const std::string& path,
                          const std::vector<ExperimentCovariateRow>& rows) {
  csv::Writer out(path);
  std::vector<std::string> header = {"site", "year"};
  for (int k = 0; k < kNumCovariates; ++k) {
    if (k == kYear) continue;
    header.push_back(kCovariateNames[k]);
  }
  out.row(header);
  for (const auto& r : rows) {
    std::vector<std::string> fields = {r.site, std::to_string(r.year)};
    for (int k = 0; k < kNumCovariates; ++k) {
      if (k == kYear) continue;
      fields.push_back(csv::format_double(r.x[k]));
    }
    out.row(fields);
  }
}

std::vector<ExperimentCovariateRow> read_exp_covariates(const std::string& path) {
  const csv::Table table = csv::read_file(path);
  const int c_site = table.require_column("site");
  const int c_year = table.require_column("year");
  std::vector<int> cov_col(kNumCovariates, -1);
  for (int k = 0; k < kNumCovariates; ++k) {
    if (k == kYear) continue;
    cov_col[static_cast<std::size_t>(k)] =
        table.require_column(kCovariateNames[k]);
  }

  std::vector<ExperimentCovariateRow> rows;
  int line = 1;
  for (const auto& raw : table.rows) {
    ++line;
    ExperimentCovariateRow r;
    r.site = raw[static_cast<std::size_t>(c_site)];
    const auto year = csv::parse_int(raw[static_cast<std::size_t>(c_year)]);
    if (!year)
      throw DataError("line " + std::to_string(line) + ": non-numeric year");
    r.year = static_cast<int>(*year);
    r.x[kYear] = static_cast<double>(r.year);
    for (int k = 0; k < kNumCovariates; ++k) {
      if (k == kYear) continue;
      const auto v = csv::parse_double(
          raw[static_cast<std::size_t>(cov_col[static_cast<std::size_t>(k)])]);
      if (!v)
        throw DataError("line " + std::to_string(line) +
                        ": non-numeric covariate " + kCovariateNames[k]);
      r.x[k] = *v;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace rotcal
