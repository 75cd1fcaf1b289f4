#pragma once

#include <span>
#include <utility>
#include <vector>

#include "rotcal/date.hpp"

namespace rotcal {

// Thermal thresholds: growth accrues between 8 and 30 degrees C, damage above 30.
inline constexpr double kGddBaseC = 8.0;
inline constexpr double kEddBaseC = 30.0;

struct DailyTemperature {
  Date date;
  double tmin_c = 0.0;
  double tmax_c = 0.0;
};

// Inclusive on both ends.
struct SeasonWindow {
  Date start;
  Date end;
};

inline SeasonWindow thermal_window(int year) {
  return {Date{year, 4, 1}, Date{year, 9, 30}};
}
inline SeasonWindow early_precip_window(int year) {
  return {Date{year, 1, 1}, Date{year, 4, 30}};
}
inline SeasonWindow growing_precip_window(int year) {
  return {Date{year, 5, 1}, Date{year, 9, 15}};
}

struct DegreeDays {
  double gdd = 0.0;  // degree-days above 8 C, capped at 30 C
  double edd = 0.0;  // degree-days above 30 C
};

// Daily GDD/EDD contribution from the sine curve through (tmin, tmax),
// evaluated as an hourly Riemann sum (24 nodes at quarter-hour offsets).
DegreeDays daily_contribution(double tmin_c, double tmax_c);

// Same quantity on a refined partition (`steps` intervals across the day).
// daily_contribution() is the steps == 24 case.
DegreeDays daily_contribution_steps(double tmin_c, double tmax_c, int steps);

// Sum of daily contributions over the window. The series must cover every
// date in [window.start, window.end] with no duplicates.
DegreeDays seasonal_degree_days(std::span<const DailyTemperature> series,
                                const SeasonWindow& window);

struct DailyPrecip {
  Date date;
  double precip_mm = 0.0;
};

double precip_window_sum(std::span<const DailyPrecip> series,
                         const SeasonWindow& window);

// Derived per-year covariates from one daily weather series.
struct SeasonalSummary {
  double gdd = 0.0;
  double edd = 0.0;
  double early_precip = 0.0;
  double growing_precip = 0.0;
};

struct DailyWeather {
  Date date;
  double tmin_c = 0.0;
  double tmax_c = 0.0;
  double precip_mm = 0.0;
};

SeasonalSummary seasonal_summary(std::span<const DailyWeather> series, int year);

}  // namespace rotcal
