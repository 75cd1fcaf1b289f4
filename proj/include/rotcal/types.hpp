#pragma once

#include <Eigen/Core>
#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "rotcal/errors.hpp"

namespace rotcal {

// Two-year rotation category: crop planted in year 1 then year 2
// (C = corn, S = soy). "Other" rows are carried through loading but are
// never passed to an estimator.
enum class RotationCategory { CC, SC, SS, CS, Other };

inline const char* to_string(RotationCategory r) {
  switch (r) {
    case RotationCategory::CC: return "CC";
    case RotationCategory::SC: return "SC";
    case RotationCategory::SS: return "SS";
    case RotationCategory::CS: return "CS";
    case RotationCategory::Other: return "OTHER";
  }
  return "?";
}

// Case-insensitive on input, canonical uppercase on output.
std::optional<RotationCategory> parse_rotation(std::string_view text);

enum class Crop { corn, soy };

inline const char* to_string(Crop c) { return c == Crop::corn ? "corn" : "soy"; }

std::optional<Crop> parse_crop(std::string_view text);

// Treated arm is the rotated two-year sequence, control the continuous one.
inline RotationCategory treated_rotation(Crop crop) {
  return crop == Crop::corn ? RotationCategory::SC : RotationCategory::CS;
}
inline RotationCategory control_rotation(Crop crop) {
  return crop == Crop::corn ? RotationCategory::CC : RotationCategory::SS;
}

// The 13 pre-selected weather and soil covariates, in fixed order.
enum CovariateIndex : int {
  kLatitude = 0,
  kLongitude,
  kYear,
  kGdd,
  kEdd,
  kEarlyPrecip,
  kGrowingPrecip,
  kPrevEarlyPrecip,
  kPrevGrowingPrecip,
  kRootznaws,
  kAws0To100,
  kNccpiCorn,
  kNccpiSoy,
  kNumCovariates
};

using Covariates = Eigen::Matrix<double, kNumCovariates, 1>;

inline constexpr std::array<const char*, kNumCovariates> kCovariateNames = {
    "lat",         "lon",
    "year",        "gdd",
    "edd",         "early_precip",
    "growing_precip", "prev_early_precip",
    "prev_growing_precip", "rootznaws",
    "aws0_100",    "nccpi_corn",
    "nccpi_soy"};

// One pixel-year of the observational panel; yield is the second year of
// the two-year rotation window.
struct ObservationalPixel {
  std::string pixel_id;
  int year = 0;
  RotationCategory rotation = RotationCategory::Other;
  double yield_tha = 0.0;
  Covariates x = Covariates::Zero();
  bool estimation_eligible = true;  // false iff rotation == Other
};

// One randomized subplot record. row_id is the load order and is the
// tie-break key wherever deterministic ordering matters.
struct ExperimentalSubplot {
  int row_id = 0;
  std::string site;
  int year = 0;
  std::string replicate;
  RotationCategory rotation = RotationCategory::Other;
  std::string tillage;
  std::string fertilizer;  // "0" is the explicit zero level
  std::string drainage;
  double yield_tha = 0.0;
  int rotation_start_year = 0;
  bool in_region = true;
};

inline bool is_zero_fertilizer(const ExperimentalSubplot& s) {
  return s.fertilizer == "0" || s.fertilizer == "0.0" || s.fertilizer == "none";
}

// Tillage indicator used by the calibration sensitivity variant.
bool has_tillage(std::string_view tillage_label);

}  // namespace rotcal
