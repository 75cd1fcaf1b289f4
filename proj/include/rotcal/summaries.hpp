#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

#include <json.hpp>

namespace rotcal {

struct QuintileContrast {
  double top_mean = 0.0;     // mean effect in the top covariate quintile
  double bottom_mean = 0.0;  // mean effect in the bottom covariate quintile
  double overall_mean = 0.0;
  int n_top = 0;
  int n_bottom = 0;

  nlohmann::ordered_json to_json() const;
};

// Quintile membership by empirical quantiles of the covariate; ties broken
// by stable index order. q is the quantile fraction (0.2 = quintiles).
QuintileContrast quintile_contrast(std::span<const double> effects,
                                   std::span<const double> covariate,
                                   double q = 0.2);

struct BinnedGrid {
  Eigen::VectorXd x_edges;   // n_x + 1 bin boundaries
  Eigen::VectorXd y_edges;
  Eigen::MatrixXd cell_mean;   // NaN where cell_count < min_count
  Eigen::MatrixXi cell_count;
  Eigen::VectorXd x_ticks;   // 1st..99th percentiles of the x covariate
  Eigen::VectorXd y_ticks;
  int n_clipped = 0;  // points outside the 1-99 percentile range

  nlohmann::ordered_json to_json() const;
};

// Equal-width bins over the 1st-99th percentile range of each axis; points
// outside that range are clipped to the edge bins.
BinnedGrid heatmap_grid(std::span<const double> effects,
                        std::span<const double> cov_x,
                        std::span<const double> cov_y, int n_bins = 40,
                        int min_count = 1);

struct SpatialGridOptions {
  double cell_km = 10.0;
  // When set, cell_km is a cell area in km^2 and the side is its square root.
  bool cell_is_area = false;
  int min_count = 1;
};

// Square geographic bins on a local equirectangular projection about the
// data centroid; cell means pool all years.
BinnedGrid spatial_grid(std::span<const double> effects,
                        std::span<const double> lat, std::span<const double> lon,
                        const SpatialGridOptions& options = {});

// Share of values strictly greater than zero.
double positivity_fraction(std::span<const double> effects);

struct YearSummary {
  int year = 0;
  int n = 0;
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

struct TemporalTrend {
  std::vector<YearSummary> per_year;
  double slope = 0.0;      // t/ha per year, OLS of effects on year
  double slope_se = 0.0;
  double intercept = 0.0;

  nlohmann::ordered_json to_json() const;
};

TemporalTrend temporal_trend(std::span<const double> effects,
                             std::span<const int> years);

}  // namespace rotcal
