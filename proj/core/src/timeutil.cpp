#include "ghr/timeutil.hpp"

#include <array>
#include <cstdio>

#include "ghr/errors.hpp"

namespace ghr {

namespace {

// Days-from-civil / civil-from-days after Howard Hinnant's algorithms.
std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                       static_cast<unsigned>(d) - 1u;
  const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yr = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y = static_cast<int>(yr + (m <= 2));
}

// Cumulative days before each month in a leap year.
constexpr std::array<int, 12> kCumLeap = {0, 31, 60, 91, 121, 152, 182, 213, 244, 274, 305, 335};

}  // namespace

CivilTime to_civil(std::int64_t t) {
  std::int64_t days = t / 86400;
  std::int64_t rem = t % 86400;
  if (rem < 0) {
    rem += 86400;
    days -= 1;
  }
  CivilTime c{};
  civil_from_days(days, c.year, c.month, c.day);
  c.hour = static_cast<int>(rem / 3600);
  c.minute = static_cast<int>((rem % 3600) / 60);
  c.second = static_cast<int>(rem % 60);
  return c;
}

std::int64_t from_civil(const CivilTime& c) {
  return days_from_civil(c.year, c.month, c.day) * 86400 + c.hour * 3600 + c.minute * 60 +
         c.second;
}

bool is_leap_year(int year) {
  return (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
}

int day_of_year_366(int month, int day) {
  if (month < 1 || month > 12 || day < 1 || day > 31) {
    throw ConfigError("day_of_year_366: invalid month/day " + std::to_string(month) + "/" +
                      std::to_string(day));
  }
  return kCumLeap[static_cast<std::size_t>(month - 1)] + day;
}

std::string format_iso8601(std::int64_t t) {
  const CivilTime c = to_civil(t);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", c.year, c.month, c.day, c.hour,
                c.minute, c.second);
  return buf;
}

std::int64_t parse_iso8601(const std::string& text) {
  CivilTime c{};
  char z = 0;
  const int got = std::sscanf(text.c_str(), "%d-%d-%dT%d:%d:%d%c", &c.year, &c.month, &c.day,
                              &c.hour, &c.minute, &c.second, &z);
  if (got != 7 || z != 'Z' || c.month < 1 || c.month > 12 || c.day < 1 || c.day > 31 ||
      c.hour < 0 || c.hour > 23 || c.minute < 0 || c.minute > 59 || c.second < 0 || c.second > 60) {
    throw ConfigError("not an ISO-8601 UTC timestamp: '" + text + "'");
  }
  return from_civil(c);
}

}  // namespace ghr
