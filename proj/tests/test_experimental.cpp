#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "rotcal/experimental.hpp"
#include "rotcal/rng.hpp"

using namespace rotcal;

namespace {

ExperimentalSubplot subplot(int row_id, const std::string& site, int year,
                            const std::string& rep, RotationCategory rot,
                            double yield, const std::string& tillage = "till",
                            const std::string& fert = "1",
                            const std::string& drain = "standard") {
  ExperimentalSubplot sp;
  sp.row_id = row_id;
  sp.site = site;
  sp.year = year;
  sp.replicate = rep;
  sp.rotation = rot;
  sp.tillage = tillage;
  sp.fertilizer = fert;
  sp.drainage = drain;
  sp.yield_tha = yield;
  sp.rotation_start_year = year - 2;
  sp.in_region = true;
  return sp;
}

}  // namespace

TEST_CASE("a matched pair subtracts control from treated") {
  std::vector<ExperimentalSubplot> subplots = {
      subplot(0, "A", 2005, "r1", RotationCategory::SC, 11.0),
      subplot(1, "A", 2005, "r1", RotationCategory::CC, 10.0)};
  const auto result = pair_subplots(subplots, Crop::corn);
  REQUIRE(result.pairs.size() == 1);
  CHECK(result.pairs[0].effect == doctest::Approx(1.0));
  CHECK(result.pairs[0].treated_yield == doctest::Approx(11.0));
  CHECK(result.pairs[0].pair_index == 1);
  CHECK(result.unmatched_row_ids.empty());
}

TEST_CASE("treated subplot without a partner is reported unmatched") {
  std::vector<ExperimentalSubplot> subplots = {
      subplot(0, "A", 2005, "r1", RotationCategory::SC, 11.0),
      subplot(1, "A", 2005, "r2", RotationCategory::CC, 10.0)};  // key differs
  const auto result = pair_subplots(subplots, Crop::corn);
  CHECK(result.pairs.empty());
  CHECK(result.unmatched_row_ids == std::vector<int>{0, 1});
}

TEST_CASE("soy pairing at a site without SS gives zero pairs") {
  std::vector<ExperimentalSubplot> subplots = {
      subplot(0, "A", 2005, "r1", RotationCategory::CS, 3.4),
      subplot(1, "A", 2005, "r1", RotationCategory::CC, 10.0)};
  const auto result = pair_subplots(subplots, Crop::soy);
  CHECK(result.pairs.empty());
}

TEST_CASE("multiple equal-key candidates pair deterministically with a note") {
  std::vector<ExperimentalSubplot> subplots = {
      subplot(0, "A", 2005, "r1", RotationCategory::SC, 12.0),
      subplot(1, "A", 2005, "r1", RotationCategory::SC, 11.0),
      subplot(2, "A", 2005, "r1", RotationCategory::CC, 10.0),
      subplot(3, "A", 2005, "r1", RotationCategory::CC, 9.0)};
  const auto result = pair_subplots(subplots, Crop::corn);
  REQUIRE(result.pairs.size() == 2);
  // ascending-yield order pairs (11, 9) and (12, 10)
  CHECK(result.pairs[0].effect == doctest::Approx(2.0));
  CHECK(result.pairs[1].effect == doctest::Approx(2.0));
  CHECK_FALSE(result.notes.empty());
}

TEST_CASE("pairing is invariant to input row order") {
  std::vector<ExperimentalSubplot> subplots;
  Rng rng(5);
  int id = 0;
  for (const std::string site : {"A", "B"}) {
    for (int year = 2004; year <= 2008; ++year) {
      for (const std::string rep : {"r1", "r2"}) {
        subplots.push_back(subplot(id++, site, year, rep, RotationCategory::SC,
                                   10.0 + rng.uniform(0.0, 2.0)));
        subplots.push_back(subplot(id++, site, year, rep, RotationCategory::CC,
                                   9.0 + rng.uniform(0.0, 2.0)));
      }
    }
  }
  const auto baseline = pair_subplots(subplots, Crop::corn);

  auto shuffled = subplots;
  for (std::size_t i = shuffled.size(); i > 1; --i)
    std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
  // reassign load order ids to mimic a permuted file
  for (std::size_t i = 0; i < shuffled.size(); ++i)
    shuffled[i].row_id = static_cast<int>(i);
  const auto permuted = pair_subplots(shuffled, Crop::corn);

  auto key_of = [](const PairedDifference& p) {
    return std::make_tuple(p.site, p.year, p.replicate, p.effect);
  };
  std::multiset<std::tuple<std::string, int, std::string, double>> a, b;
  for (const auto& p : baseline.pairs) a.insert(key_of(p));
  for (const auto& p : permuted.pairs) b.insert(key_of(p));
  CHECK(a == b);
}

TEST_CASE("complete pairing means pair count equals group minimum") {
  std::vector<ExperimentalSubplot> subplots = {
      subplot(0, "A", 2005, "r1", RotationCategory::SC, 11.0),
      subplot(1, "A", 2005, "r1", RotationCategory::SC, 11.5),
      subplot(2, "A", 2005, "r1", RotationCategory::SC, 12.0),
      subplot(3, "A", 2005, "r1", RotationCategory::CC, 10.0),
      subplot(4, "A", 2005, "r1", RotationCategory::CC, 10.5)};
  const auto result = pair_subplots(subplots, Crop::corn);
  CHECK(result.pairs.size() == 2);  // min(3 treated, 2 control)
  CHECK(result.unmatched_row_ids.size() == 1);
}

TEST_CASE("mean of pair effects equals mean treated minus mean control") {
  std::vector<ExperimentalSubplot> subplots;
  Rng rng(9);
  int id = 0;
  for (int year = 2004; year <= 2006; ++year) {
    for (const std::string rep : {"r1", "r2", "r3"}) {
      subplots.push_back(subplot(id++, "A", year, rep, RotationCategory::SC,
                                 10.0 + rng.uniform(0.0, 3.0)));
      subplots.push_back(subplot(id++, "A", year, rep, RotationCategory::CC,
                                 9.0 + rng.uniform(0.0, 3.0)));
    }
  }
  const auto result = pair_subplots(subplots, Crop::corn);
  REQUIRE(result.pairs.size() == 9);
  double treated_sum = 0, control_sum = 0, effect_sum = 0;
  for (const auto& sp : subplots)
    (sp.rotation == RotationCategory::SC ? treated_sum : control_sum) +=
        sp.yield_tha;
  for (const auto& p : result.pairs) effect_sum += p.effect;
  CHECK(effect_sum / 9.0 ==
        doctest::Approx(treated_sum / 9.0 - control_sum / 9.0).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// Site-year means and standard errors
// ---------------------------------------------------------------------------

namespace {
PairedDifference pair_at(const std::string& site, int year, double effect) {
  PairedDifference p;
  p.site = site;
  p.year = year;
  p.effect = effect;
  p.treated_yield = 10.0 + effect;
  p.control_yield = 10.0;
  return p;
}
}  // namespace

TEST_CASE("single pair: mean defined, standard error flagged undefined") {
  const auto summary = site_year_means({pair_at("A", 2005, 1.0)});
  REQUIRE(summary.site_years.size() == 1);
  CHECK(summary.site_years[0].mean_effect == doctest::Approx(1.0));
  CHECK_FALSE(summary.site_years[0].se_defined);
  CHECK(std::isnan(summary.site_years[0].se));
  CHECK_FALSE(summary.sites[0].se_defined);
}

TEST_CASE("two pairs in one site-year: hand-computed statistics") {
  const auto summary =
      site_year_means({pair_at("A", 2005, 1.0), pair_at("A", 2005, 3.0)});
  REQUIRE(summary.site_years.size() == 1);
  const auto& row = summary.site_years[0];
  CHECK(row.mean_effect == doctest::Approx(2.0));
  CHECK(row.se_defined);
  // sd = sqrt(2), se = sd / sqrt(2) = 1, df = 1 -> t = 12.706
  CHECK(row.se == doctest::Approx(1.0));
  CHECK(row.ci_low == doctest::Approx(2.0 - 12.706));
  CHECK(row.ci_high == doctest::Approx(2.0 + 12.706));
}

TEST_CASE("identical effects give zero standard error") {
  const auto summary = site_year_means(
      {pair_at("A", 2005, 1.5), pair_at("A", 2005, 1.5), pair_at("A", 2006, 1.5)});
  for (const auto& row : summary.site_years) {
    CHECK(row.se_defined);
    CHECK(row.se == doctest::Approx(0.0));
  }
  CHECK(summary.sites[0].se == doctest::Approx(0.0));
}

TEST_CASE("pooling borrows within the site across years") {
  // 2005 has spread, 2006 is a single pair; pooling still gives 2006 an SE.
  const auto summary = site_year_means({pair_at("A", 2005, 1.0),
                                        pair_at("A", 2005, 3.0),
                                        pair_at("A", 2006, 2.0)});
  REQUIRE(summary.site_years.size() == 2);
  const auto& single = summary.site_years[1];
  CHECK(single.year == 2006);
  CHECK(single.se_defined);
  // pooled sd = sqrt(2) over df = 1; n_pairs 1 -> se = sqrt(2)
  CHECK(single.se == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("site-level summary uses unpooled site-specific errors") {
  const auto summary = site_year_means({pair_at("A", 2005, 1.0),
                                        pair_at("A", 2006, 2.0),
                                        pair_at("A", 2007, 3.0),
                                        pair_at("B", 2005, 5.0)});
  REQUIRE(summary.sites.size() == 2);
  const auto& a = summary.sites[0];
  CHECK(a.site == "A");
  CHECK(a.mean_effect == doctest::Approx(2.0));
  CHECK(a.n_years == 3);
  // sd over {1,2,3} = 1, se = 1/sqrt(3)
  CHECK(a.se == doctest::Approx(1.0 / std::sqrt(3.0)));
  CHECK_FALSE(summary.sites[1].se_defined);
}

TEST_CASE("critical values switch from t to normal past 30 df") {
  CHECK(critical_value_95(1) == doctest::Approx(12.706));
  CHECK(critical_value_95(10) == doctest::Approx(2.228));
  CHECK(critical_value_95(30) == doctest::Approx(2.042));
  CHECK(critical_value_95(31) == doctest::Approx(1.959964));
  CHECK(critical_value_95(1000) == doctest::Approx(1.959964));
}
