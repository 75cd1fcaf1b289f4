#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "rotcal/degree_days.hpp"
#include "rotcal/rng.hpp"

using namespace rotcal;

namespace {

// Independent oracle: averages the same sine curve against both thresholds
// with one-second midpoint steps. Kept free of the library's quadrature code.
DegreeDays second_step_oracle(double tmin, double tmax) {
  const double mean = 0.5 * (tmax + tmin);
  const double amp = 0.5 * (tmax - tmin);
  const int steps = 86400;
  double above8 = 0.0, above30 = 0.0;
  for (int k = 0; k < steps; ++k) {
    const double h = (k + 0.5) * 24.0 / steps;
    const double t = mean + amp * std::sin(2.0 * std::numbers::pi * h / 24.0);
    above8 += std::max(t - 8.0, 0.0);
    above30 += std::max(t - 30.0, 0.0);
  }
  above8 /= steps;
  above30 /= steps;
  return {above8 - above30, above30};
}

std::vector<DailyTemperature> constant_series(int year, int month, int day,
                                              int n_days, double t) {
  std::vector<DailyTemperature> out;
  Date d{year, month, day};
  for (int i = 0; i < n_days; ++i) {
    out.push_back({d, t, t});
    d = d.next_day();
  }
  return out;
}

}  // namespace

TEST_CASE("daily contribution at the thresholds") {
  const DegreeDays at_base = daily_contribution(8.0, 8.0);
  CHECK(at_base.gdd == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(at_base.edd == doctest::Approx(0.0).epsilon(1e-12));

  const DegreeDays at_cap = daily_contribution(30.0, 30.0);
  CHECK(at_cap.gdd == doctest::Approx(22.0).epsilon(1e-12));
  CHECK(at_cap.edd == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("daily contribution matches the one-second oracle") {
  const DegreeDays hourly = daily_contribution(20.0, 40.0);
  const DegreeDays fine = second_step_oracle(20.0, 40.0);
  CHECK(std::abs(hourly.gdd - fine.gdd) < 0.05);
  CHECK(std::abs(hourly.edd - fine.edd) < 0.05);
  // Frozen values from the oracle itself (one-second steps).
  CHECK(fine.gdd == doctest::Approx(18.8169011375).epsilon(1e-6));
  CHECK(fine.edd == doctest::Approx(3.1830988625).epsilon(1e-6));
}

TEST_CASE("tmin above tmax is rejected") {
  CHECK_THROWS_AS(daily_contribution(10.0, 5.0), std::invalid_argument);
}

TEST_CASE("threshold properties") {
  Rng rng(31);
  for (int i = 0; i < 200; ++i) {
    const double a = rng.uniform(-40.0, 8.0);
    const double b = rng.uniform(-40.0, 8.0);
    const auto d = daily_contribution(std::min(a, b), std::max(a, b));
    CHECK(d.gdd == 0.0);
    CHECK(d.edd == 0.0);
  }
  for (int i = 0; i < 200; ++i) {
    const double a = rng.uniform(-10.0, 30.0);
    const double b = rng.uniform(-10.0, 30.0);
    const auto d = daily_contribution(std::min(a, b), std::max(a, b));
    CHECK(d.edd == 0.0);
    CHECK(d.gdd >= 0.0);
  }
}

TEST_CASE("monotonicity in tmin and tmax") {
  Rng rng(77);
  for (int i = 0; i < 300; ++i) {
    const double a = rng.uniform(-30.0, 50.0);
    const double b = rng.uniform(-30.0, 50.0);
    const double tmin = std::min(a, b), tmax = std::max(a, b);
    const auto base = daily_contribution(tmin, tmax);
    const double bump = rng.uniform(0.0, 5.0);

    const auto warmer_max = daily_contribution(tmin, tmax + bump);
    CHECK(warmer_max.gdd + warmer_max.edd >= base.gdd + base.edd - 1e-12);
    CHECK(warmer_max.edd >= base.edd - 1e-12);

    const auto warmer_min =
        daily_contribution(std::min(tmin + bump, tmax), tmax);
    CHECK(warmer_min.gdd + warmer_min.edd >= base.gdd + base.edd - 1e-12);
  }
}

TEST_CASE("gdd + edd equals the above-base Riemann sum exactly") {
  Rng rng(13);
  for (int i = 0; i < 300; ++i) {
    const double a = rng.uniform(-30.0, 50.0);
    const double b = rng.uniform(-30.0, 50.0);
    const double tmin = std::min(a, b), tmax = std::max(a, b);
    const auto d = daily_contribution(tmin, tmax);
    // Recompute the above-8 sum directly at the same nodes.
    const double mean = 0.5 * (tmax + tmin), amp = 0.5 * (tmax - tmin);
    double above8 = 0.0;
    for (int k = 0; k < 24; ++k) {
      const double h = k + 0.25;
      const double t = mean + amp * std::sin(2.0 * std::numbers::pi * h / 24.0);
      above8 += std::max(t - 8.0, 0.0);
    }
    above8 /= 24.0;
    CHECK(d.gdd + d.edd == doctest::Approx(above8).epsilon(1e-13));
  }
}

TEST_CASE("24 to 1440 step refinement stays under 0.05") {
  Rng rng(4242);
  for (int i = 0; i < 500; ++i) {
    const double a = rng.uniform(-30.0, 50.0);
    const double b = rng.uniform(-30.0, 50.0);
    const double tmin = std::min(a, b), tmax = std::max(a, b);
    const auto coarse = daily_contribution_steps(tmin, tmax, 24);
    const auto fine = daily_contribution_steps(tmin, tmax, 1440);
    CHECK(std::abs(coarse.gdd - fine.gdd) < 0.05);
    CHECK(std::abs(coarse.edd - fine.edd) < 0.05);
  }
}

TEST_CASE("seasonal degree days over constant series") {
  const auto zeros = constant_series(2004, 4, 1, 3, 8.0);
  const SeasonWindow window{Date{2004, 4, 1}, Date{2004, 4, 3}};
  const auto dd = seasonal_degree_days(zeros, window);
  CHECK(dd.gdd == doctest::Approx(0.0));
  CHECK(dd.edd == doctest::Approx(0.0));

  const auto cap = constant_series(2004, 4, 1, 2, 30.0);
  const SeasonWindow two{Date{2004, 4, 1}, Date{2004, 4, 2}};
  const auto dd2 = seasonal_degree_days(cap, two);
  CHECK(dd2.gdd == doctest::Approx(44.0));
  CHECK(dd2.edd == doctest::Approx(0.0));
}

TEST_CASE("seasonal sum equals the per-day loop on a random series") {
  Rng rng(99);
  std::vector<DailyTemperature> series;
  Date d{2010, 4, 1};
  const SeasonWindow window = thermal_window(2010);
  while (d <= window.end) {
    const double a = rng.uniform(-5.0, 45.0);
    const double b = rng.uniform(-5.0, 45.0);
    series.push_back({d, std::min(a, b), std::max(a, b)});
    d = d.next_day();
  }
  CHECK(series.size() == 183);

  // Reference: independent accumulation day by day.
  double gdd = 0.0, edd = 0.0;
  for (const auto& rec : series) {
    const auto c = daily_contribution(rec.tmin_c, rec.tmax_c);
    gdd += c.gdd;
    edd += c.edd;
  }
  const auto total = seasonal_degree_days(series, window);
  CHECK(total.gdd == doctest::Approx(gdd).epsilon(1e-12));
  CHECK(total.edd == doctest::Approx(edd).epsilon(1e-12));
}

TEST_CASE("seasonal errors: gaps and duplicates") {
  auto series = constant_series(2004, 4, 1, 10, 20.0);
  const SeasonWindow window{Date{2004, 4, 1}, Date{2004, 4, 10}};

  auto gappy = series;
  gappy.erase(gappy.begin() + 4);  // remove April 5
  CHECK_THROWS_WITH_AS(seasonal_degree_days(gappy, window),
                       "missing date in window: 2004-04-05", DataError);

  auto dup = series;
  dup.push_back({Date{2004, 4, 7}, 20.0, 20.0});
  CHECK_THROWS_AS(seasonal_degree_days(dup, window), DataError);
}

TEST_CASE("precipitation window sums") {
  std::vector<DailyPrecip> series;
  Date d{2004, 1, 1};
  const SeasonWindow window = early_precip_window(2004);
  while (d <= window.end) {
    series.push_back({d, 0.0});
    d = d.next_day();
  }
  CHECK(precip_window_sum(series, window) == doctest::Approx(0.0));

  series[40].precip_mm = 10.0;
  CHECK(precip_window_sum(series, window) == doctest::Approx(10.0));

  SUBCASE("random series matches reference accumulation") {
    Rng rng(5);
    for (auto& rec : series) rec.precip_mm = rng.uniform(0.0, 30.0);
    double reference = 0.0;
    for (const auto& rec : series) reference += rec.precip_mm;
    CHECK(precip_window_sum(series, window) ==
          doctest::Approx(reference).epsilon(1e-12));
  }

  SUBCASE("negative precipitation is rejected") {
    series[3].precip_mm = -1.0;
    CHECK_THROWS_AS(precip_window_sum(series, window), DataError);
  }

  SUBCASE("gap is rejected") {
    series.erase(series.begin() + 10);
    CHECK_THROWS_AS(precip_window_sum(series, window), DataError);
  }
}

TEST_CASE("leap day is included when inside the window") {
  std::vector<DailyPrecip> series;
  Date d{2004, 1, 1};  // 2004 is a leap year
  const SeasonWindow window = early_precip_window(2004);
  int count = 0;
  while (d <= window.end) {
    series.push_back({d, 1.0});
    d = d.next_day();
    ++count;
  }
  CHECK(count == 121);  // 31 + 29 + 31 + 30
  CHECK(precip_window_sum(series, window) == doctest::Approx(121.0));
}
