#include "telemote/clock.hpp"

#include <cstdio>
#include <ctime>

namespace telemote {

std::int64_t SystemClock::now_unix() const {
    return static_cast<std::int64_t>(std::time(nullptr));
}

namespace date_util {
namespace {

// Howard Hinnant's civil date algorithms (public domain).
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);                   // [0, 399]
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;         // [0, 365]
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;                  // [0, 146096]
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);                // [0, 146096]
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;  // [0, 399]
    const std::int64_t yr = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);                // [0, 365]
    const unsigned mp = (5 * doy + 2) / 153;                                     // [0, 11]
    d = doy - (153 * mp + 2) / 5 + 1;                                            // [1, 31]
    m = mp + (mp < 10 ? 3 : -9);                                                 // [1, 12]
    y = yr + (m <= 2);
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

} // namespace

std::int64_t unix_to_days(std::int64_t unix_s) {
    return floor_div(unix_s, 86400);
}

std::string utc_yyyymmdd(std::int64_t unix_s) {
    std::int64_t y;
    unsigned m, d;
    civil_from_days(unix_to_days(unix_s), y, m, d);
    char buf[24];
    std::snprintf(buf, sizeof buf, "%04lld%02u%02u", static_cast<long long>(y), m, d);
    return buf;
}

std::string utc_hhmmss(std::int64_t unix_s) {
    std::int64_t sod = unix_s - unix_to_days(unix_s) * 86400;
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02d%02d%02d", static_cast<int>(sod / 3600),
                  static_cast<int>(sod / 60 % 60), static_cast<int>(sod % 60));
    return buf;
}

std::optional<std::int64_t> parse_yyyymmdd_days(const std::string& s) {
    if (s.size() != 8) return std::nullopt;
    for (char c : s)
        if (c < '0' || c > '9') return std::nullopt;
    const int y = std::stoi(s.substr(0, 4));
    const unsigned m = static_cast<unsigned>(std::stoi(s.substr(4, 2)));
    const unsigned d = static_cast<unsigned>(std::stoi(s.substr(6, 2)));
    if (m < 1 || m > 12 || d < 1 || d > 31) return std::nullopt;
    return days_from_civil(y, m, d);
}

} // namespace date_util
} // namespace telemote
