#include "rotcal/summaries.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include "rotcal/errors.hpp"
#include "rotcal/validation.hpp"

namespace rotcal {

namespace {

double mean_of(std::span<const double> values) {
  double sum = 0.0;
  for (const double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

Eigen::VectorXd percentile_ticks(std::vector<double> sorted_values) {
  Eigen::VectorXd ticks(99);
  for (int p = 1; p <= 99; ++p)
    ticks[p - 1] = sorted_quantile(sorted_values, p / 100.0);
  return ticks;
}

}  // namespace

QuintileContrast quintile_contrast(std::span<const double> effects,
                                   std::span<const double> covariate,
                                   double q) {
  const std::size_t n = effects.size();
  if (n != covariate.size())
    throw DataError("quintile_contrast: series lengths differ");
  if (n < 5) throw DataError("quintile_contrast: need at least 5 points");
  if (!(q > 0.0 && q < 0.5))
    throw ConfigError("quantile fraction must be in (0, 0.5)");

  const bool constant = std::all_of(
      covariate.begin(), covariate.end(),
      [&](double v) { return v == covariate[0]; });
  if (constant)
    throw DataError("quintile_contrast: covariate is constant; quantiles undefined");

  // Stable rank order: ties keep original index order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return covariate[a] < covariate[b];
  });

  const std::size_t m = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(q * static_cast<double>(n))));

  QuintileContrast out;
  out.n_bottom = static_cast<int>(m);
  out.n_top = static_cast<int>(m);
  double bottom = 0.0, top = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    bottom += effects[order[k]];
    top += effects[order[n - 1 - k]];
  }
  out.bottom_mean = bottom / static_cast<double>(m);
  out.top_mean = top / static_cast<double>(m);
  out.overall_mean = mean_of(effects);
  return out;
}

nlohmann::ordered_json QuintileContrast::to_json() const {
  return {{"top_mean", top_mean},
          {"bottom_mean", bottom_mean},
          {"overall_mean", overall_mean},
          {"n_top", n_top},
          {"n_bottom", n_bottom}};
}

BinnedGrid heatmap_grid(std::span<const double> effects,
                        std::span<const double> cov_x,
                        std::span<const double> cov_y, int n_bins,
                        int min_count) {
  const std::size_t n = effects.size();
  if (n != cov_x.size() || n != cov_y.size())
    throw DataError("heatmap_grid: series lengths differ");
  if (n_bins < 1) throw ConfigError("heatmap_grid: n_bins must be >= 1");
  if (static_cast<int>(n) < n_bins)
    throw DataError("heatmap_grid: fewer points than bins");

  auto axis = [&](std::span<const double> values, Eigen::VectorXd& edges,
                  Eigen::VectorXd& ticks) {
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double lo = sorted_quantile(sorted, 0.01);
    const double hi = sorted_quantile(sorted, 0.99);
    if (!(hi > lo))
      throw DataError("heatmap_grid: degenerate axis (zero range)");
    edges.resize(n_bins + 1);
    for (int k = 0; k <= n_bins; ++k)
      edges[k] = lo + (hi - lo) * static_cast<double>(k) / n_bins;
    ticks = percentile_ticks(std::move(sorted));
  };

  BinnedGrid grid;
  axis(cov_x, grid.x_edges, grid.x_ticks);
  axis(cov_y, grid.y_edges, grid.y_ticks);

  auto bin_of = [&](double v, const Eigen::VectorXd& edges, bool& clipped) {
    const double lo = edges[0];
    const double hi = edges[edges.size() - 1];
    if (v <= lo) {
      clipped = clipped || v < lo;
      return 0;
    }
    if (v >= hi) {
      clipped = clipped || v > hi;
      return n_bins - 1;
    }
    const int k = static_cast<int>((v - lo) / (hi - lo) * n_bins);
    return std::min(k, n_bins - 1);
  };

  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n_bins, n_bins);
  grid.cell_count = Eigen::MatrixXi::Zero(n_bins, n_bins);
  for (std::size_t i = 0; i < n; ++i) {
    bool clipped = false;
    const int bx = bin_of(cov_x[i], grid.x_edges, clipped);
    const int by = bin_of(cov_y[i], grid.y_edges, clipped);
    if (clipped) ++grid.n_clipped;
    sums(bx, by) += effects[i];
    grid.cell_count(bx, by) += 1;
  }
  grid.cell_mean.setConstant(n_bins, n_bins,
                             std::numeric_limits<double>::quiet_NaN());
  for (int i = 0; i < n_bins; ++i)
    for (int j = 0; j < n_bins; ++j)
      if (grid.cell_count(i, j) >= std::max(1, min_count))
        grid.cell_mean(i, j) = sums(i, j) / grid.cell_count(i, j);
  return grid;
}

BinnedGrid spatial_grid(std::span<const double> effects,
                        std::span<const double> lat, std::span<const double> lon,
                        const SpatialGridOptions& options) {
  const std::size_t n = effects.size();
  if (n != lat.size() || n != lon.size())
    throw DataError("spatial_grid: series lengths differ");
  if (n == 0) throw DataError("spatial_grid: empty input");
  const double side =
      options.cell_is_area ? std::sqrt(options.cell_km) : options.cell_km;
  if (!(side > 0.0)) throw ConfigError("spatial_grid: cell size must be > 0");

  // Local equirectangular projection about the centroid, in km.
  constexpr double kEarthRadiusKm = 6371.0088;
  const double deg = std::numbers::pi / 180.0;
  const double lat0 = mean_of(lat);
  const double lon0 = mean_of(lon);
  const double coslat = std::cos(lat0 * deg);

  std::vector<double> px(n), py(n);
  for (std::size_t i = 0; i < n; ++i) {
    px[i] = kEarthRadiusKm * coslat * (lon[i] - lon0) * deg;
    py[i] = kEarthRadiusKm * (lat[i] - lat0) * deg;
  }

  // The centroid sits at a cell center, not on a boundary, so close pairs
  // around the center of mass share a cell.
  auto cell_index = [&](double v) {
    return static_cast<long>(std::floor(v / side + 0.5));
  };
  long min_ix = cell_index(px[0]), max_ix = min_ix;
  long min_iy = cell_index(py[0]), max_iy = min_iy;
  for (std::size_t i = 1; i < n; ++i) {
    min_ix = std::min(min_ix, cell_index(px[i]));
    max_ix = std::max(max_ix, cell_index(px[i]));
    min_iy = std::min(min_iy, cell_index(py[i]));
    max_iy = std::max(max_iy, cell_index(py[i]));
  }
  const int nx = static_cast<int>(max_ix - min_ix + 1);
  const int ny = static_cast<int>(max_iy - min_iy + 1);

  BinnedGrid grid;
  grid.x_edges.resize(nx + 1);
  for (int k = 0; k <= nx; ++k)
    grid.x_edges[k] = (static_cast<double>(min_ix + k) - 0.5) * side;
  grid.y_edges.resize(ny + 1);
  for (int k = 0; k <= ny; ++k)
    grid.y_edges[k] = (static_cast<double>(min_iy + k) - 0.5) * side;

  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(nx, ny);
  grid.cell_count = Eigen::MatrixXi::Zero(nx, ny);
  for (std::size_t i = 0; i < n; ++i) {
    const int bx = static_cast<int>(cell_index(px[i]) - min_ix);
    const int by = static_cast<int>(cell_index(py[i]) - min_iy);
    sums(bx, by) += effects[i];
    grid.cell_count(bx, by) += 1;
  }
  grid.cell_mean.setConstant(nx, ny, std::numeric_limits<double>::quiet_NaN());
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j)
      if (grid.cell_count(i, j) >= std::max(1, options.min_count))
        grid.cell_mean(i, j) = sums(i, j) / grid.cell_count(i, j);
  return grid;
}

nlohmann::ordered_json BinnedGrid::to_json() const {
  auto vec = [](const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < cell_mean.rows(); ++i) {
    for (Eigen::Index j = 0; j < cell_mean.cols(); ++j) {
      if (cell_count(i, j) == 0) continue;
      nlohmann::ordered_json cell = {{"x_bin", i}, {"y_bin", j},
                                     {"count", cell_count(i, j)}};
      cell["mean"] = std::isnan(cell_mean(i, j))
                         ? nlohmann::ordered_json(nullptr)
                         : nlohmann::ordered_json(cell_mean(i, j));
      cells.push_back(std::move(cell));
    }
  }
  nlohmann::ordered_json j = {{"x_edges", vec(x_edges)},
                              {"y_edges", vec(y_edges)},
                              {"n_clipped", n_clipped},
                              {"cells", cells}};
  if (x_ticks.size() > 0) j["x_percentile_ticks"] = vec(x_ticks);
  if (y_ticks.size() > 0) j["y_percentile_ticks"] = vec(y_ticks);
  return j;
}

double positivity_fraction(std::span<const double> effects) {
  if (effects.empty()) throw DataError("positivity_fraction: empty input");
  int pos = 0;
  for (const double v : effects) pos += v > 0.0 ? 1 : 0;
  return static_cast<double>(pos) / static_cast<double>(effects.size());
}

TemporalTrend temporal_trend(std::span<const double> effects,
                             std::span<const int> years) {
  const std::size_t n = effects.size();
  if (n != years.size()) throw DataError("temporal_trend: lengths differ");
  std::map<int, std::vector<double>> by_year;
  for (std::size_t i = 0; i < n; ++i) by_year[years[i]].push_back(effects[i]);
  if (by_year.size() < 2)
    throw DataError("temporal_trend: need >= 2 distinct years");

  TemporalTrend trend;
  for (auto& [year, values] : by_year) {
    std::sort(values.begin(), values.end());
    YearSummary s;
    s.year = year;
    s.n = static_cast<int>(values.size());
    s.min = values.front();
    s.max = values.back();
    s.q1 = sorted_quantile(values, 0.25);
    s.median = sorted_quantile(values, 0.5);
    s.q3 = sorted_quantile(values, 0.75);
    trend.per_year.push_back(s);
  }

  // OLS of every effect on its year.
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += static_cast<double>(years[i]);
    my += effects[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(years[i]) - mx;
    sxx += dx * dx;
    sxy += dx * (effects[i] - my);
  }
  trend.slope = sxy / sxx;
  trend.intercept = my - trend.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double fitted =
        trend.intercept + trend.slope * static_cast<double>(years[i]);
    rss += (effects[i] - fitted) * (effects[i] - fitted);
  }
  trend.slope_se =
      n > 2 ? std::sqrt(rss / (static_cast<double>(n) - 2.0) / sxx) : 0.0;
  return trend;
}

nlohmann::ordered_json TemporalTrend::to_json() const {
  nlohmann::ordered_json years = nlohmann::ordered_json::array();
  for (const auto& s : per_year) {
    years.push_back({{"year", s.year},
                     {"n", s.n},
                     {"min", s.min},
                     {"q1", s.q1},
                     {"median", s.median},
                     {"q3", s.q3},
                     {"max", s.max}});
  }
  return {{"per_year", years},
          {"slope", slope},
          {"slope_se", slope_se},
          {"intercept", intercept}};
}

}  // namespace rotcal
