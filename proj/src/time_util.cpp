#include "ufi/time_util.hpp"

#include <cstdio>
#include <stdexcept>

namespace ufi {

namespace {

// Days since 1970-01-01 for a civil date (Howard Hinnant's algorithm).
int64_t days_from_civil(int64_t y, int m, int d) {
    y -= m <= 2;
    const int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<int64_t>(doe) - 719468;
}

void civil_from_days(int64_t z, int64_t& y, int& m, int& d) {
    z += 719468;
    const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    y = static_cast<int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
    y += m <= 2;
}

}  // namespace

int64_t parse_iso8601(const std::string& text) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    char tail = '\0';
    int n = std::sscanf(text.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%c",
                        &y, &mo, &d, &h, &mi, &s, &tail);
    if (n < 6 || (n == 7 && tail != 'Z') || mo < 1 || mo > 12 || d < 1 || d > 31 ||
        h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 60) {
        throw std::invalid_argument("malformed ISO-8601 timestamp: '" + text + "'");
    }
    return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + s;
}

std::string format_iso8601(int64_t unix_seconds) {
    int64_t days = unix_seconds / 86400;
    int64_t sod = unix_seconds % 86400;
    if (sod < 0) {
        sod += 86400;
        days -= 1;
    }
    int64_t y;
    int mo, d;
    civil_from_days(days, y, mo, d);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04lld-%02d-%02dT%02lld:%02lld:%02lld",
                  static_cast<long long>(y), mo, d,
                  static_cast<long long>(sod / 3600),
                  static_cast<long long>((sod % 3600) / 60),
                  static_cast<long long>(sod % 60));
    return buf;
}

int day_of_week(int64_t unix_seconds) {
    int64_t days = unix_seconds / 86400;
    if (unix_seconds % 86400 < 0) days -= 1;
    // 1970-01-01 was a Thursday; Monday-based index.
    return static_cast<int>(((days % 7) + 7 + 3) % 7);
}

int hour_of_day(int64_t unix_seconds) {
    int64_t sod = unix_seconds % 86400;
    if (sod < 0) sod += 86400;
    return static_cast<int>(sod / 3600);
}

}  // namespace ufi
