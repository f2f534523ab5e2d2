#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace pvf {

/// Seconds since the Unix epoch, UTC.
using EpochSeconds = std::int64_t;

inline constexpr EpochSeconds kSecondsPerDay = 86400;

/// Calendar day number (days since 1970-01-01, UTC).
constexpr std::int64_t day_of(EpochSeconds t) {
  return (t >= 0 ? t : t - (kSecondsPerDay - 1)) / kSecondsPerDay;
}

/// Parses an RFC 3339 timestamp such as `2022-07-01T00:05:00Z` or
/// `2022-07-01 08:05:00+08:00`. Fractional seconds are truncated.
/// Throws ValidationError on malformed input.
EpochSeconds parse_rfc3339(std::string_view text);

/// Formats as `YYYY-MM-DDTHH:MM:SSZ`.
std::string format_rfc3339(EpochSeconds t);

/// Formats a day number as `YYYY-MM-DD`.
std::string format_day(std::int64_t day);

}  // namespace pvf
