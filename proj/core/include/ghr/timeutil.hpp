#pragma once

#include <cstdint>
#include <string>

namespace ghr {

// Civil calendar helpers (proleptic Gregorian, UTC only). Times are unix
// seconds throughout the project; weather states sit on 6-hour boundaries.

struct CivilTime {
  int year;
  int month;  // 1..12
  int day;    // 1..31
  int hour;
  int minute;
  int second;
};

constexpr std::int64_t kSecondsPerHour = 3600;
constexpr std::int64_t kStepSeconds = 6 * kSecondsPerHour;

CivilTime to_civil(std::int64_t unix_seconds);
std::int64_t from_civil(const CivilTime& c);

bool is_leap_year(int year);

// Day-of-year index 1..366 in a fixed leap-calendar layout: every (month,
// day) pair maps to the same slot regardless of year; Feb 29 owns slot 60.
int day_of_year_366(int month, int day);

// "2022-12-23T12:00:00Z"
std::string format_iso8601(std::int64_t unix_seconds);
// Accepts the format above (trailing Z required). Throws ConfigError on
// malformed input.
std::int64_t parse_iso8601(const std::string& text);

}  // namespace ghr
