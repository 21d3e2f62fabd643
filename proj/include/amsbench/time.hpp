#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace ams {

/// Seconds since the Unix epoch, timezone-naive (the cohort clock).
using Timestamp = std::int64_t;

constexpr std::int64_t kSecond = 1;
constexpr std::int64_t kMinute = 60;
constexpr std::int64_t kHour = 3600;
constexpr std::int64_t kDay = 86400;

constexpr std::int64_t hours(double h) { return static_cast<std::int64_t>(h * kHour); }

/// Days since 1970-01-01 for a civil date (proleptic Gregorian).
std::int64_t days_from_civil(int year, int month, int day);

/// Inverse of days_from_civil.
void civil_from_days(std::int64_t days, int& year, int& month, int& day);

/// Calendar date (days since epoch) containing the timestamp.
inline std::int64_t date_of(Timestamp t) {
    // floor division: timestamps can predate the epoch in principle
    std::int64_t d = t / kDay;
    if (t % kDay < 0) --d;
    return d;
}

/// Timestamp at `hour`:00:00 on the given date (days since epoch).
inline Timestamp at_hour(std::int64_t date, int hour) { return date * kDay + hour * kHour; }

/// Parse "YYYY-MM-DDTHH:MM:SS" (a space is accepted in place of 'T').
/// Throws ParseError for any malformed or out-of-range component.
Timestamp parse_timestamp(std::string_view text);

/// Format as "YYYY-MM-DDTHH:MM:SS". Inverse of parse_timestamp.
std::string format_timestamp(Timestamp t);

}  // namespace ams
