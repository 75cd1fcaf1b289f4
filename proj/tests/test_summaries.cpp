#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "rotcal/errors.hpp"
#include "rotcal/rng.hpp"
#include "rotcal/summaries.hpp"

using namespace rotcal;

namespace {

std::vector<double> random_series(int n, std::uint64_t seed, double lo,
                                  double hi) {
  Rng rng(seed);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = rng.uniform(lo, hi);
  return out;
}

}  // namespace

TEST_CASE("constant effects give equal quintile means") {
  const std::vector<double> effects(10, 1.0);
  const auto cov = random_series(10, 3, 0.0, 5.0);
  const auto contrast = quintile_contrast(effects, cov);
  CHECK(contrast.top_mean == doctest::Approx(1.0));
  CHECK(contrast.bottom_mean == doctest::Approx(1.0));
  CHECK(contrast.overall_mean == doctest::Approx(1.0));
}

TEST_CASE("quintile contrast matches a brute-force sort-and-slice oracle") {
  for (const std::uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
    const int n = 50;
    const auto effects = random_series(n, seed, -1.0, 2.0);
    const auto cov = random_series(n, seed + 100, 0.0, 10.0);
    const auto contrast = quintile_contrast(effects, cov);

    // Oracle: full sort of (covariate, index) pairs, slice both ends.
    std::vector<std::pair<double, int>> order;
    for (int i = 0; i < n; ++i) order.emplace_back(cov[static_cast<std::size_t>(i)], i);
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    const int m = n / 5;
    double bottom = 0, top = 0;
    for (int k = 0; k < m; ++k) {
      bottom += effects[static_cast<std::size_t>(order[static_cast<std::size_t>(k)].second)];
      top += effects[static_cast<std::size_t>(order[static_cast<std::size_t>(n - 1 - k)].second)];
    }
    CHECK(contrast.bottom_mean == doctest::Approx(bottom / m).epsilon(1e-10));
    CHECK(contrast.top_mean == doctest::Approx(top / m).epsilon(1e-10));

    double overall = 0;
    for (const double e : effects) overall += e;
    CHECK(contrast.overall_mean == doctest::Approx(overall / n).epsilon(1e-10));
  }
}

TEST_CASE("quintile contrast rejects a constant covariate") {
  const auto effects = random_series(10, 5, 0.0, 1.0);
  const std::vector<double> cov(10, 2.0);
  CHECK_THROWS_AS(quintile_contrast(effects, cov), DataError);
}

TEST_CASE("ties in the covariate break by stable index order") {
  const std::vector<double> effects = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const std::vector<double> cov = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  const auto contrast = quintile_contrast(effects, cov);
  CHECK(contrast.bottom_mean == doctest::Approx((1.0 + 2.0) / 2));
  CHECK(contrast.top_mean == doctest::Approx((10.0 + 9.0) / 2));
}

// ---------------------------------------------------------------------------
// Heatmap grid
// ---------------------------------------------------------------------------

TEST_CASE("single point occupies one cell with its own effect") {
  // n >= n_bins, so use one bin.
  const std::vector<double> effects = {0.7};
  const std::vector<double> x = {1.0};
  const std::vector<double> y = {2.0};
  CHECK_THROWS_AS(heatmap_grid(effects, x, y, 1), DataError);  // zero range
}

TEST_CASE("heatmap matches a nested-loop binning oracle") {
  const int n = 50;
  const auto effects = random_series(n, 11, -1.0, 1.0);
  const auto cx = random_series(n, 12, 0.0, 10.0);
  const auto cy = random_series(n, 13, -5.0, 5.0);
  const int bins = 4;
  const auto grid = heatmap_grid(effects, cx, cy, bins);

  // Oracle: direct nested loops over cells using the grid's own edges.
  for (int i = 0; i < bins; ++i) {
    for (int j = 0; j < bins; ++j) {
      double sum = 0;
      int count = 0;
      for (int k = 0; k < n; ++k) {
        double vx = cx[static_cast<std::size_t>(k)];
        double vy = cy[static_cast<std::size_t>(k)];
        // clip to the percentile range exactly as documented
        vx = std::clamp(vx, grid.x_edges[0], grid.x_edges[bins]);
        vy = std::clamp(vy, grid.y_edges[0], grid.y_edges[bins]);
        int bx = vx >= grid.x_edges[bins]
                     ? bins - 1
                     : static_cast<int>((vx - grid.x_edges[0]) /
                                        (grid.x_edges[bins] - grid.x_edges[0]) *
                                        bins);
        int by = vy >= grid.y_edges[bins]
                     ? bins - 1
                     : static_cast<int>((vy - grid.y_edges[0]) /
                                        (grid.y_edges[bins] - grid.y_edges[0]) *
                                        bins);
        bx = std::min(bx, bins - 1);
        by = std::min(by, bins - 1);
        if (bx == i && by == j) {
          sum += effects[static_cast<std::size_t>(k)];
          ++count;
        }
      }
      CHECK(grid.cell_count(i, j) == count);
      if (count > 0)
        CHECK(grid.cell_mean(i, j) == doctest::Approx(sum / count).epsilon(1e-10));
    }
  }

  SUBCASE("weighted cell means recombine to the global mean") {
    double weighted = 0;
    int total = 0;
    for (int i = 0; i < bins; ++i) {
      for (int j = 0; j < bins; ++j) {
        if (grid.cell_count(i, j) == 0) continue;
        weighted += grid.cell_mean(i, j) * grid.cell_count(i, j);
        total += grid.cell_count(i, j);
      }
    }
    CHECK(total == n);
    double global = 0;
    for (const double e : effects) global += e;
    CHECK(weighted / total == doctest::Approx(global / n).epsilon(1e-10));
  }

  SUBCASE("percentile ticks are attached and ordered") {
    REQUIRE(grid.x_ticks.size() == 99);
    for (int k = 1; k < 99; ++k) CHECK(grid.x_ticks[k] >= grid.x_ticks[k - 1]);
  }
}

TEST_CASE("heatmap rejects a degenerate axis") {
  const auto effects = random_series(20, 1, 0.0, 1.0);
  const std::vector<double> constant(20, 3.0);
  const auto cy = random_series(20, 2, 0.0, 1.0);
  CHECK_THROWS_AS(heatmap_grid(effects, constant, cy, 4), DataError);
}

TEST_CASE("heatmap is invariant to input permutation") {
  const int n = 60;
  auto effects = random_series(n, 21, -1.0, 1.0);
  auto cx = random_series(n, 22, 0.0, 10.0);
  auto cy = random_series(n, 23, 0.0, 10.0);
  const auto grid = heatmap_grid(effects, cx, cy, 5);

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(4);
  for (std::size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[rng.below(i)]);
  std::vector<double> e2(n), x2(n), y2(n);
  for (int i = 0; i < n; ++i) {
    e2[static_cast<std::size_t>(i)] = effects[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    x2[static_cast<std::size_t>(i)] = cx[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    y2[static_cast<std::size_t>(i)] = cy[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  const auto grid2 = heatmap_grid(e2, x2, y2, 5);
  CHECK(grid.cell_count == grid2.cell_count);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      if (grid.cell_count(i, j) > 0)
        CHECK(grid.cell_mean(i, j) ==
              doctest::Approx(grid2.cell_mean(i, j)).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// Spatial grid
// ---------------------------------------------------------------------------

TEST_CASE("nearby points share a cell, distant points do not") {
  // ~1 km apart at 42N
  const std::vector<double> close_effects = {1.0, 3.0};
  const std::vector<double> close_lat = {42.0, 42.009};
  const std::vector<double> close_lon = {-93.0, -93.0};
  const auto close_grid = spatial_grid(close_effects, close_lat, close_lon);
  int populated = 0;
  for (Eigen::Index i = 0; i < close_grid.cell_count.rows(); ++i)
    for (Eigen::Index j = 0; j < close_grid.cell_count.cols(); ++j)
      if (close_grid.cell_count(i, j) > 0) {
        ++populated;
        CHECK(close_grid.cell_mean(i, j) == doctest::Approx(2.0));
      }
  CHECK(populated == 1);

  // ~100 km apart
  const std::vector<double> far_lat = {42.0, 42.9};
  const auto far_grid = spatial_grid(close_effects, far_lat, close_lon);
  int far_populated = 0;
  for (Eigen::Index i = 0; i < far_grid.cell_count.rows(); ++i)
    for (Eigen::Index j = 0; j < far_grid.cell_count.cols(); ++j)
      if (far_grid.cell_count(i, j) > 0) ++far_populated;
  CHECK(far_populated == 2);
}

TEST_CASE("spatial grid matches a floor-division oracle") {
  const int n = 50;
  const auto effects = random_series(n, 31, -1.0, 1.0);
  auto lat = random_series(n, 32, 40.0, 44.0);
  auto lon = random_series(n, 33, -96.0, -90.0);
  SpatialGridOptions options;
  options.cell_km = 25.0;
  const auto grid = spatial_grid(effects, lat, lon, options);

  // Oracle: recompute the projection and the floor division directly.
  const double R = 6371.0088;
  const double deg = std::acos(-1.0) / 180.0;
  double lat0 = 0, lon0 = 0;
  for (int i = 0; i < n; ++i) {
    lat0 += lat[static_cast<std::size_t>(i)];
    lon0 += lon[static_cast<std::size_t>(i)];
  }
  lat0 /= n;
  lon0 /= n;
  std::map<std::pair<long, long>, std::pair<double, int>> cells;
  for (int i = 0; i < n; ++i) {
    const double x = R * std::cos(lat0 * deg) * (lon[static_cast<std::size_t>(i)] - lon0) * deg;
    const double y = R * (lat[static_cast<std::size_t>(i)] - lat0) * deg;
    const auto key =
        std::make_pair(static_cast<long>(std::floor(x / 25.0 + 0.5)),
                       static_cast<long>(std::floor(y / 25.0 + 0.5)));
    cells[key].first += effects[static_cast<std::size_t>(i)];
    cells[key].second += 1;
  }
  int populated = 0;
  for (Eigen::Index i = 0; i < grid.cell_count.rows(); ++i)
    for (Eigen::Index j = 0; j < grid.cell_count.cols(); ++j)
      if (grid.cell_count(i, j) > 0) ++populated;
  CHECK(populated == static_cast<int>(cells.size()));

  double weighted = 0;
  int total = 0;
  for (Eigen::Index i = 0; i < grid.cell_count.rows(); ++i) {
    for (Eigen::Index j = 0; j < grid.cell_count.cols(); ++j) {
      if (grid.cell_count(i, j) == 0) continue;
      weighted += grid.cell_mean(i, j) * grid.cell_count(i, j);
      total += grid.cell_count(i, j);
    }
  }
  double global = 0;
  for (const double e : effects) global += e;
  CHECK(weighted / total == doctest::Approx(global / n).epsilon(1e-10));
}

TEST_CASE("area mode uses the square root side length") {
  const std::vector<double> effects = {1.0, 2.0};
  const std::vector<double> lat = {42.0, 42.02};  // ~2.2 km apart
  const std::vector<double> lon = {-93.0, -93.0};
  SpatialGridOptions side_mode;   // 10 km side: same cell likely
  SpatialGridOptions area_mode;
  area_mode.cell_km = 10.0;       // 10 km^2 -> side ~3.16 km
  area_mode.cell_is_area = true;
  const auto by_side = spatial_grid(effects, lat, lon, side_mode);
  const auto by_area = spatial_grid(effects, lat, lon, area_mode);
  CHECK(by_side.x_edges[1] - by_side.x_edges[0] == doctest::Approx(10.0));
  CHECK(by_area.x_edges[1] - by_area.x_edges[0] ==
        doctest::Approx(std::sqrt(10.0)));
}

// ---------------------------------------------------------------------------
// Positivity and temporal trend
// ---------------------------------------------------------------------------

TEST_CASE("positivity fraction counts strict positives") {
  CHECK(positivity_fraction(std::vector<double>{1.0, 2.0, 0.5}) ==
        doctest::Approx(1.0));
  CHECK(positivity_fraction(std::vector<double>{-1.0, 1.0}) ==
        doctest::Approx(0.5));
  CHECK(positivity_fraction(std::vector<double>{0.0, 1.0}) ==
        doctest::Approx(0.5));  // zero is not positive
  CHECK_THROWS_AS(positivity_fraction(std::vector<double>{}), DataError);
}

TEST_CASE("temporal trend: identical effects every year give zero slope") {
  std::vector<double> effects;
  std::vector<int> years;
  for (int y = 2000; y < 2005; ++y) {
    for (int i = 0; i < 4; ++i) {
      effects.push_back(1.3);
      years.push_back(y);
    }
  }
  const auto trend = temporal_trend(effects, years);
  CHECK(trend.slope == doctest::Approx(0.0));
  CHECK(trend.per_year.size() == 5);
}

TEST_CASE("effects equal to year minus 2000 give slope one") {
  std::vector<double> effects;
  std::vector<int> years;
  for (int y = 2000; y < 2010; ++y) {
    effects.push_back(static_cast<double>(y - 2000));
    years.push_back(y);
  }
  const auto trend = temporal_trend(effects, years);
  CHECK(trend.slope == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("random panel slope matches the normal-equations oracle") {
  Rng rng(41);
  std::vector<double> effects;
  std::vector<int> years;
  for (int y = 2000; y < 2012; ++y) {
    for (int i = 0; i < 6; ++i) {
      years.push_back(y);
      effects.push_back(0.3 + 0.02 * (y - 2000) + rng.normal(0.0, 0.3));
    }
  }
  const auto trend = temporal_trend(effects, years);

  // Oracle: closed-form simple regression via accumulated moments.
  const int n = static_cast<int>(effects.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    sx += years[static_cast<std::size_t>(i)];
    sy += effects[static_cast<std::size_t>(i)];
    sxx += static_cast<double>(years[static_cast<std::size_t>(i)]) * years[static_cast<std::size_t>(i)];
    sxy += years[static_cast<std::size_t>(i)] * effects[static_cast<std::size_t>(i)];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  CHECK(trend.slope == doctest::Approx(slope).epsilon(1e-10));

  const double intercept = (sy - slope * sx) / n;
  CHECK(trend.intercept == doctest::Approx(intercept).epsilon(1e-8));
}

TEST_CASE("a single year cannot define a trend") {
  const std::vector<double> effects = {1.0, 2.0};
  const std::vector<int> years = {2005, 2005};
  CHECK_THROWS_AS(temporal_trend(effects, years), DataError);
}
