#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

namespace tdm {

enum class TimestampFormat { kEpochSeconds, kIso8601 };

namespace detail {

/// Days since 1970-01-01 for a proleptic Gregorian date (Howard Hinnant's
/// days_from_civil).
inline std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = unsigned(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + std::int64_t(doe) - 719468;
}

inline bool is_leap(std::int64_t y) {
    return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
}

inline unsigned days_in_month(std::int64_t y, unsigned m) {
    static constexpr unsigned kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (m == 2 && is_leap(y)) return 29;
    return kDays[m - 1];
}

}  // namespace detail

inline std::optional<std::int64_t> parse_epoch_seconds(std::string_view s) {
    if (s.empty()) return std::nullopt;
    std::size_t i = 0;
    bool neg = false;
    if (s[0] == '-') { neg = true; i = 1; }
    if (i == s.size()) return std::nullopt;
    std::int64_t v = 0;
    for (; i < s.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return std::nullopt;
        v = v * 10 + (s[i] - '0');
        if (v > 4102444800LL * 100) return std::nullopt;  // sanity bound
    }
    return neg ? -v : v;
}

/// YYYY-MM-DD[T ]HH:MM:SS with optional "Z" or "+hh[:mm]" / "-hh[:mm]" offset.
inline std::optional<std::int64_t> parse_iso8601(std::string_view sv) {
    const std::string s(sv);
    int y, mo, d, h, mi, se;
    int n = 0;
    if (std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &y, &mo, &d, &h, &mi, &se, &n) != 6 &&
        std::sscanf(s.c_str(), "%4d-%2d-%2d %2d:%2d:%2d%n", &y, &mo, &d, &h, &mi, &se, &n) != 6) {
        return std::nullopt;
    }
    if (mo < 1 || mo > 12 || d < 1 || unsigned(d) > detail::days_in_month(y, unsigned(mo))) return std::nullopt;
    if (h < 0 || h > 23 || mi < 0 || mi > 59 || se < 0 || se > 60) return std::nullopt;

    std::int64_t offset = 0;
    std::string_view rest = sv.substr(std::size_t(n));
    if (!rest.empty()) {
        if (rest == "Z") {
            // UTC
        } else if (rest[0] == '+' || rest[0] == '-') {
            int oh = 0, om = 0;
            const std::string r(rest.substr(1));
            if (std::sscanf(r.c_str(), "%2d:%2d", &oh, &om) < 1) return std::nullopt;
            if (oh > 14 || om > 59) return std::nullopt;
            offset = std::int64_t(oh) * 3600 + std::int64_t(om) * 60;
            if (rest[0] == '-') offset = -offset;
        } else {
            return std::nullopt;
        }
    }
    const std::int64_t days = detail::days_from_civil(y, unsigned(mo), unsigned(d));
    return days * 86400 + h * 3600 + mi * 60 + se - offset;
}

/// Detects the timestamp format of a sample value; formats are uniform per
/// column within a file, so callers detect once and parse the rest strictly.
inline std::optional<TimestampFormat> detect_timestamp_format(std::string_view s) {
    if (parse_epoch_seconds(s)) return TimestampFormat::kEpochSeconds;
    if (parse_iso8601(s)) return TimestampFormat::kIso8601;
    return std::nullopt;
}

inline std::optional<std::int64_t> parse_timestamp(std::string_view s, TimestampFormat f) {
    return f == TimestampFormat::kEpochSeconds ? parse_epoch_seconds(s) : parse_iso8601(s);
}

inline std::string format_iso8601(std::int64_t t) {
    std::int64_t days = t / 86400;
    std::int64_t sod = t % 86400;
    if (sod < 0) { sod += 86400; --days; }
    // civil_from_days (Hinnant)
    days += 719468;
    const std::int64_t era = (days >= 0 ? days : days - 146096) / 146097;
    const unsigned doe = unsigned(days - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y0 = std::int64_t(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp + (mp < 10 ? 3 : -9);
    const std::int64_t y = y0 + (m <= 2);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02lld:%02lld:%02lldZ",
                  static_cast<long long>(y), m, d,
                  static_cast<long long>(sod / 3600),
                  static_cast<long long>(sod / 60 % 60),
                  static_cast<long long>(sod % 60));
    return buf;
}

}  // namespace tdm
