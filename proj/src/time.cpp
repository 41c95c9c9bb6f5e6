#include "castorette/time.hpp"

#include "castorette/error.hpp"

#include <cctype>
#include <charconv>

namespace castorette {

namespace {

int read_int(std::string_view text, std::size_t& pos, std::size_t width) {
    if (pos + width > text.size()) {
        fail(ErrorCode::InvalidArgument, "truncated timestamp '" + std::string(text) + "'");
    }
    int value = 0;
    auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + width, value);
    if (ec != std::errc{} || ptr != text.data() + pos + width) {
        fail(ErrorCode::InvalidArgument, "bad digits in timestamp '" + std::string(text) + "'");
    }
    pos += width;
    return value;
}

void expect(std::string_view text, std::size_t& pos, char c) {
    if (pos >= text.size() || text[pos] != c) {
        fail(ErrorCode::InvalidArgument, "malformed timestamp '" + std::string(text) + "'");
    }
    ++pos;
}

} // namespace

Timestamp parse_rfc3339(std::string_view text) {
    std::size_t pos = 0;
    const int y = read_int(text, pos, 4);
    expect(text, pos, '-');
    const int mo = read_int(text, pos, 2);
    expect(text, pos, '-');
    const int d = read_int(text, pos, 2);
    if (pos >= text.size() || (text[pos] != 'T' && text[pos] != 't' && text[pos] != ' ')) {
        fail(ErrorCode::InvalidArgument, "missing time in '" + std::string(text) + "'");
    }
    ++pos;
    const int h = read_int(text, pos, 2);
    expect(text, pos, ':');
    const int mi = read_int(text, pos, 2);
    expect(text, pos, ':');
    const int s = read_int(text, pos, 2);
    if (pos < text.size() && text[pos] == '.') {
        ++pos;
        const std::size_t start = pos;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
        if (pos == start) fail(ErrorCode::InvalidArgument, "empty fraction in '" + std::string(text) + "'");
    }
    int offset_seconds = 0;
    if (pos < text.size() && (text[pos] == 'Z' || text[pos] == 'z')) {
        ++pos;
    } else if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) {
        const int sign = text[pos] == '+' ? 1 : -1;
        ++pos;
        const int oh = read_int(text, pos, 2);
        expect(text, pos, ':');
        const int om = read_int(text, pos, 2);
        offset_seconds = sign * (oh * 3600 + om * 60);
    } else {
        fail(ErrorCode::InvalidArgument, "missing UTC offset in '" + std::string(text) + "'");
    }
    if (pos != text.size()) fail(ErrorCode::InvalidArgument, "trailing characters in '" + std::string(text) + "'");

    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || s > 60) {
        fail(ErrorCode::InvalidArgument, "out-of-range field in '" + std::string(text) + "'");
    }
    return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s} - seconds{offset_seconds};
}

std::string format_rfc3339(Timestamp ts) {
    using namespace std::chrono;
    const auto day = floor<days>(ts);
    const year_month_day ymd{day};
    const hh_mm_ss<seconds> tod{ts - day};
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02lldZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<long>(tod.hours().count()), static_cast<long>(tod.minutes().count()),
                  static_cast<long long>(tod.seconds().count()));
    return buf;
}

Duration parse_iso_duration(std::string_view text) {
    const std::string original(text);
    if (text.empty() || text.front() != 'P') fail(ErrorCode::InvalidArgument, "bad ISO duration '" + original + "'");
    text.remove_prefix(1);
    bool in_time = false;
    bool any = false;
    std::int64_t total = 0;
    while (!text.empty()) {
        if (text.front() == 'T') {
            if (in_time) fail(ErrorCode::InvalidArgument, "bad ISO duration '" + original + "'");
            in_time = true;
            text.remove_prefix(1);
            continue;
        }
        std::int64_t value = 0;
        auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
        if (ec != std::errc{} || ptr == text.data() + text.size() || value < 0) {
            fail(ErrorCode::InvalidArgument, "bad ISO duration '" + original + "'");
        }
        const char unit = *ptr;
        text.remove_prefix(static_cast<std::size_t>(ptr - text.data()) + 1);
        std::int64_t scale = 0;
        if (!in_time && unit == 'W') scale = 7 * 86400;
        else if (!in_time && unit == 'D') scale = 86400;
        else if (in_time && unit == 'H') scale = 3600;
        else if (in_time && unit == 'M') scale = 60;
        else if (in_time && unit == 'S') scale = 1;
        else fail(ErrorCode::InvalidArgument, "unsupported unit in ISO duration '" + original + "'");
        total += value * scale;
        any = true;
    }
    if (!any) fail(ErrorCode::InvalidArgument, "empty ISO duration '" + original + "'");
    return Duration{total};
}

std::string format_iso_duration(Duration d) {
    std::int64_t s = d.count();
    if (s < 0) fail(ErrorCode::InvalidArgument, "negative duration");
    if (s == 0) return "PT0S";
    // Whole multiples of a day beyond one print as days; anything else,
    // including a single day, as hours so PT24H reads the way schedules are
    // usually written.
    if (s % 86400 == 0 && s > 86400) return "P" + std::to_string(s / 86400) + "D";
    std::string out = "PT";
    if (s >= 3600) out += std::to_string(s / 3600) + "H", s %= 3600;
    if (s >= 60) out += std::to_string(s / 60) + "M", s %= 60;
    if (s > 0) out += std::to_string(s) + "S";
    return out;
}

Duration parse_human_duration(std::string_view text) {
    if (!text.empty() && text.front() == 'P') return parse_iso_duration(text);
    std::int64_t value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || value < 0) fail(ErrorCode::InvalidArgument, "bad duration '" + std::string(text) + "'");
    const std::string_view unit(ptr, static_cast<std::size_t>(text.data() + text.size() - ptr));
    if (unit.empty() || unit == "s") return Duration{value};
    if (unit == "ms") return Duration{value / 1000};
    if (unit == "m") return Duration{value * 60};
    if (unit == "h") return Duration{value * 3600};
    if (unit == "d") return Duration{value * 86400};
    fail(ErrorCode::InvalidArgument, "bad duration unit in '" + std::string(text) + "'");
}

CivilTime civil(Timestamp ts) {
    using namespace std::chrono;
    const auto day = floor<days>(ts);
    const year_month_day ymd{day};
    const weekday wd{day};
    const sys_days jan1{ymd.year() / January / 1};
    const hh_mm_ss<seconds> tod{ts - day};
    return CivilTime{
        static_cast<int>(ymd.year()),
        static_cast<unsigned>(ymd.month()),
        static_cast<unsigned>(ymd.day()),
        static_cast<unsigned>(tod.hours().count()),
        wd.c_encoding(),
        static_cast<unsigned>((day - jan1).count()),
        ymd.year().is_leap() ? 366u : 365u,
    };
}

Timestamp day_start(Timestamp ts) { return std::chrono::floor<std::chrono::days>(ts); }

} // namespace castorette
