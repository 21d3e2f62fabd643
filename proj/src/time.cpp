#include "amsbench/time.hpp"

#include <array>
#include <charconv>

#include "amsbench/errors.hpp"

namespace ams {

// Howard Hinnant's branchless civil-date algorithms.
std::int64_t days_from_civil(int year, int month, int day) {
    year -= month <= 2;
    const std::int64_t era = (year >= 0 ? year : year - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(year - era * 400);             // [0, 399]
    const unsigned doy = (153u * (month + (month > 2 ? -3 : 9)) + 2) / 5 + day - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;               // [0, 146096]
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t days, int& year, int& month, int& day) {
    days += 719468;
    const std::int64_t era = (days >= 0 ? days : days - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(days - era * 146097);          // [0, 146096]
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);             // [0, 365]
    const unsigned mp = (5 * doy + 2) / 153;                                  // [0, 11]
    day = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    month = static_cast<int>(mp + (mp < 10 ? 3 : -9));
    year = static_cast<int>(y + (month <= 2));
}

namespace {

bool is_leap(int y) { return y % 4 == 0 && (y % 100 != 0 || y % 400 == 0); }

int days_in_month(int y, int m) {
    static constexpr std::array<int, 12> kDays = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (m == 2 && is_leap(y)) return 29;
    return kDays[m - 1];
}

// Parses exactly `n` digits at text[pos..]; throws on anything else.
int parse_digits(std::string_view text, std::size_t pos, std::size_t n) {
    if (pos + n > text.size()) throw ParseError("timestamp too short: '" + std::string(text) + "'");
    int value = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const char c = text[pos + i];
        if (c < '0' || c > '9')
            throw ParseError("non-digit in timestamp: '" + std::string(text) + "'");
        value = value * 10 + (c - '0');
    }
    return value;
}

void expect_sep(std::string_view text, std::size_t pos, char want, char alt = '\0') {
    if (pos >= text.size() || (text[pos] != want && (alt == '\0' || text[pos] != alt)))
        throw ParseError("malformed timestamp: '" + std::string(text) + "'");
}

}  // namespace

Timestamp parse_timestamp(std::string_view text) {
    // fixed layout YYYY-MM-DDTHH:MM:SS (19 chars); 'T' or ' ' separator
    if (text.size() != 19) throw ParseError("malformed timestamp: '" + std::string(text) + "'");
    const int year = parse_digits(text, 0, 4);
    expect_sep(text, 4, '-');
    const int month = parse_digits(text, 5, 2);
    expect_sep(text, 7, '-');
    const int day = parse_digits(text, 8, 2);
    expect_sep(text, 10, 'T', ' ');
    const int hour = parse_digits(text, 11, 2);
    expect_sep(text, 13, ':');
    const int minute = parse_digits(text, 14, 2);
    expect_sep(text, 16, ':');
    const int second = parse_digits(text, 17, 2);

    if (month < 1 || month > 12)
        throw ParseError("timestamp month out of range: '" + std::string(text) + "'");
    if (day < 1 || day > days_in_month(year, month))
        throw ParseError("timestamp day out of range: '" + std::string(text) + "'");
    if (hour > 23 || minute > 59 || second > 59)
        throw ParseError("timestamp time out of range: '" + std::string(text) + "'");

    return days_from_civil(year, month, day) * kDay + hour * kHour + minute * kMinute + second;
}

std::string format_timestamp(Timestamp t) {
    const std::int64_t date = date_of(t);
    std::int64_t rem = t - date * kDay;  // [0, 86400)
    int year, month, day;
    civil_from_days(date, year, month, day);
    const int hour = static_cast<int>(rem / kHour);
    rem -= static_cast<std::int64_t>(hour) * kHour;
    const int minute = static_cast<int>(rem / kMinute);
    const int second = static_cast<int>(rem % kMinute);

    char buf[20];
    auto put2 = [&](int pos, int v) {
        buf[pos] = static_cast<char>('0' + v / 10);
        buf[pos + 1] = static_cast<char>('0' + v % 10);
    };
    buf[0] = static_cast<char>('0' + year / 1000);
    buf[1] = static_cast<char>('0' + year / 100 % 10);
    buf[2] = static_cast<char>('0' + year / 10 % 10);
    buf[3] = static_cast<char>('0' + year % 10);
    buf[4] = '-';
    put2(5, month);
    buf[7] = '-';
    put2(8, day);
    buf[10] = 'T';
    put2(11, hour);
    buf[13] = ':';
    put2(14, minute);
    buf[16] = ':';
    put2(17, second);
    return std::string(buf, 19);
}

}  // namespace ams
