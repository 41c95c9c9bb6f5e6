#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <string_view>

namespace castorette {

/// UTC instant at second resolution.
using Timestamp = std::chrono::sys_seconds;
using Duration = std::chrono::seconds;

constexpr Duration kHour{3600};
constexpr Duration kDay{86400};

inline std::int64_t epoch_seconds(Timestamp ts) noexcept { return ts.time_since_epoch().count(); }
inline Timestamp from_epoch(std::int64_t s) noexcept { return Timestamp{Duration{s}}; }

/// Accepts `YYYY-MM-DDTHH:MM:SS` followed by `Z` or a `+hh:mm`/`-hh:mm`
/// offset. Fractional seconds are truncated. Throws Error(InvalidArgument).
Timestamp parse_rfc3339(std::string_view text);
std::string format_rfc3339(Timestamp ts);

/// ISO-8601 durations of the `PnW` / `PnDTnHnMnS` family. Years and months
/// are rejected because they have no fixed length.
Duration parse_iso_duration(std::string_view text);
std::string format_iso_duration(Duration d);

/// CLI-friendly durations: `90s`, `5m`, `2h`, `1d`, a bare number of
/// seconds, or anything parse_iso_duration accepts.
Duration parse_human_duration(std::string_view text);

/// Calendar helpers, all in UTC.
struct CivilTime {
    int year;
    unsigned month;   // 1..12
    unsigned day;     // 1..31
    unsigned hour;    // 0..23
    unsigned weekday; // 0 = Sunday .. 6 = Saturday
    unsigned day_of_year; // 0-based
    unsigned days_in_year;
};

CivilTime civil(Timestamp ts);

/// Midnight of the UTC day containing ts.
Timestamp day_start(Timestamp ts);

} // namespace castorette
