#pragma once

#include <charconv>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

#include "rotcal/errors.hpp"

namespace rotcal {

// Proleptic Gregorian calendar date. Day arithmetic goes through a
// days-since-epoch serial so ranges and gaps are cheap to check.
struct Date {
  int year = 1970;
  int month = 1;  // 1-12
  int day = 1;    // 1-31

  friend auto operator<=>(const Date&, const Date&) = default;

  static constexpr bool is_leap(int y) noexcept {
    return y % 4 == 0 && (y % 100 != 0 || y % 400 == 0);
  }

  static constexpr int days_in_month(int y, int m) noexcept {
    constexpr int lengths[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (m == 2 && is_leap(y)) return 29;
    return lengths[m - 1];
  }

  constexpr bool valid() const noexcept {
    return month >= 1 && month <= 12 && day >= 1 &&
           day <= days_in_month(year, month);
  }

  // Days since 1970-01-01 (civil-days algorithm).
  constexpr std::int64_t serial() const noexcept {
    const int y = year - (month <= 2);
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy =
        (153u * static_cast<unsigned>(month + (month > 2 ? -3 : 9)) + 2) / 5 +
        static_cast<unsigned>(day) - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
  }

  static constexpr Date from_serial(std::int64_t z) noexcept {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp + (mp < 10 ? 3 : -9);
    return Date{static_cast<int>(y + (m <= 2)), static_cast<int>(m),
                static_cast<int>(d)};
  }

  constexpr Date next_day() const noexcept { return from_serial(serial() + 1); }

  // Parses strict ISO-8601 "YYYY-MM-DD".
  static Date parse(std::string_view text) {
    auto fail = [&] {
      throw DataError("invalid ISO-8601 date: '" + std::string(text) + "'");
    };
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') fail();
    Date d;
    auto field = [&](std::string_view part, int& out) {
      auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
      if (ec != std::errc{} || p != part.data() + part.size()) fail();
    };
    field(text.substr(0, 4), d.year);
    field(text.substr(5, 2), d.month);
    field(text.substr(8, 2), d.day);
    if (!d.valid()) fail();
    return d;
  }

  std::string to_string() const {
    char buf[11];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
    return std::string(buf);
  }
};

}  // namespace rotcal
