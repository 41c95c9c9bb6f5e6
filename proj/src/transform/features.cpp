#include "castorette/error.hpp"
#include "castorette/transform.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_map>

namespace castorette::transform {

namespace {

const std::vector<std::string> kDayTypes{"weekday", "saturday", "sunday_holiday"};
const std::vector<std::string> kSeasons{"winter", "spring", "summer", "autumn"};

struct DailyStat {
    std::string prefix;
    int kind; // 0 min, 1 max, 2 average
};
const DailyStat kDaily[] = {{"DailyMin", 0}, {"DailyMax", 1}, {"DailyAverage", 2}};

std::optional<std::size_t> lag_hours(const std::string& name) {
    if (!name.starts_with("lag_")) return std::nullopt;
    std::size_t h = 0;
    const char* first = name.data() + 4;
    const char* last = name.data() + name.size();
    const auto [ptr, ec] = std::from_chars(first, last, h);
    if (ec != std::errc{} || ptr != last || h == 0) return std::nullopt;
    return h;
}

bool is_calendar(const std::string& name) {
    return name == "TimeOfDay" || name == "DayType" || name == "TimeOfYear" || name == "Season";
}

class Builder {
public:
    Builder(const RawInputs& in, const HolidayCalendar& holidays) : in_(in), holidays_(holidays) {
        for (std::size_t i = 0; i < in.timestamps.size(); ++i) index_[epoch_seconds(in.timestamps[i])] = i;
    }

    Column build(const std::string& name) const {
        if (is_calendar(name)) return calendar(name);
        if (const auto h = lag_hours(name)) return lag(name, *h);
        if (const auto at = name.find('@'); at != std::string::npos) return interaction(name, name.substr(0, at), name.substr(at + 1));
        for (const auto& d : kDaily) {
            if (name.starts_with(d.prefix) && name.size() > d.prefix.size() && !in_.covariates.contains(name)) {
                return daily(name, name.substr(d.prefix.size()), d.kind);
            }
        }
        return covariate(name);
    }

private:
    std::size_t rows() const { return in_.timestamps.size(); }

    Column calendar(const std::string& name) const {
        const std::size_t n = rows();
        if (name == "DayType" || name == "Season") {
            std::vector<int> codes(n);
            for (std::size_t i = 0; i < n; ++i) {
                const auto c = civil(in_.timestamps[i]);
                if (name == "DayType") {
                    codes[i] = (c.weekday == 0 || holidays_.contains(in_.timestamps[i])) ? 2 : c.weekday == 6 ? 1 : 0;
                } else {
                    codes[i] = static_cast<int>((c.month % 12) / 3);
                }
            }
            return categorical_column(name, name == "DayType" ? kDayTypes : kSeasons, std::move(codes));
        }
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = civil(in_.timestamps[i]);
            v[i] = name == "TimeOfDay" ? static_cast<double>(c.hour)
                                       : static_cast<double>(c.day_of_year) / static_cast<double>(c.days_in_year);
        }
        return real_column(name, std::move(v));
    }

    const MaskedSeries& source(const std::string& name) const {
        const auto it = in_.covariates.find(name);
        if (it == in_.covariates.end()) fail(ErrorCode::MissingCovariate, "no covariate '" + name + "'");
        if (it->second.size() != rows()) {
            fail(ErrorCode::MisalignedTimestamps, "covariate '" + name + "' has " + std::to_string(it->second.size()) +
                                                      " values for " + std::to_string(rows()) + " timestamps");
        }
        return it->second;
    }

    Column covariate(const std::string& name) const {
        const MaskedSeries& s = source(name);
        Column c = real_column(name, s.values);
        for (std::size_t i = 0; i < rows(); ++i) c.missing[i] = s.missing[i] || !std::isfinite(s.values[i]);
        return c;
    }

    Column daily(const std::string& name, const std::string& base, int kind) const {
        const MaskedSeries& s = source(base);
        Column c = real_column(name, std::vector<double>(rows(), 0.0));
        std::size_t i = 0;
        while (i < rows()) {
            const auto day = day_start(in_.timestamps[i]);
            std::size_t j = i;
            double lo = std::numeric_limits<double>::infinity();
            double hi = -lo;
            double sum = 0.0;
            std::size_t count = 0;
            while (j < rows() && day_start(in_.timestamps[j]) == day) {
                if (!s.missing[j] && std::isfinite(s.values[j])) {
                    lo = std::min(lo, s.values[j]);
                    hi = std::max(hi, s.values[j]);
                    sum += s.values[j];
                    ++count;
                }
                ++j;
            }
            const double v = kind == 0 ? lo : kind == 1 ? hi : sum / static_cast<double>(count);
            for (std::size_t k = i; k < j; ++k) {
                c.values[k] = count ? v : 0.0;
                c.missing[k] = count == 0;
            }
            i = j;
        }
        return c;
    }

    Column lag(const std::string& name, std::size_t hours) const {
        if (!in_.target) fail(ErrorCode::MissingCovariate, "'" + name + "' needs the target series");
        const MaskedSeries& t = *in_.target;
        Column c = real_column(name, std::vector<double>(rows(), 0.0));
        const auto shift = static_cast<std::int64_t>(hours) * 3600;
        for (std::size_t i = 0; i < rows(); ++i) {
            const auto it = index_.find(epoch_seconds(in_.timestamps[i]) - shift);
            if (it == index_.end() || t.missing[it->second] || !std::isfinite(t.values[it->second])) {
                c.missing[i] = 1;
                continue;
            }
            c.values[i] = t.values[it->second];
        }
        return c;
    }

    Column interaction(const std::string& name, const std::string& cont, const std::string& cat) const {
        Column a = build(cont);
        Column b = build(cat);
        if (a.kind != ColumnKind::Real) fail(ErrorCode::InvalidArgument, "'" + cont + "' in '" + name + "' must be continuous");
        if (b.kind != ColumnKind::Categorical) fail(ErrorCode::InvalidArgument, "'" + cat + "' in '" + name + "' must be categorical");
        Column c;
        c.name = name;
        c.kind = ColumnKind::Interaction;
        c.values = std::move(a.values);
        c.codes = std::move(b.codes);
        c.levels = std::move(b.levels);
        c.missing.resize(rows());
        for (std::size_t i = 0; i < rows(); ++i) c.missing[i] = a.missing[i] || b.missing[i];
        return c;
    }

    const RawInputs& in_;
    const HolidayCalendar& holidays_;
    std::unordered_map<std::int64_t, std::size_t> index_;
};

} // namespace

HolidayCalendar HolidayCalendar::from_json(const nlohmann::json& j) {
    const nlohmann::json& list = j.is_object() ? j.at("holidays") : j;
    if (!list.is_array()) fail(ErrorCode::InvalidArgument, "holiday calendar must be an array of dates");
    std::set<std::chrono::sys_days> days;
    for (const auto& d : list) {
        if (!d.is_string()) fail(ErrorCode::InvalidArgument, "holiday entries must be \"YYYY-MM-DD\" strings");
        const auto ts = parse_rfc3339(d.get<std::string>() + "T00:00:00Z");
        days.insert(std::chrono::floor<std::chrono::days>(ts));
    }
    return HolidayCalendar(std::move(days));
}

HolidayCalendar HolidayCalendar::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Io, "cannot open holiday calendar " + path.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidArgument, "holiday calendar " + path.string() + ": " + e.what());
    }
}

bool HolidayCalendar::contains(Timestamp ts) const {
    return days_.contains(std::chrono::floor<std::chrono::days>(ts));
}

bool is_derived_feature(const std::string& name) {
    if (is_calendar(name) || lag_hours(name) || name.find('@') != std::string::npos) return true;
    return std::any_of(std::begin(kDaily), std::end(kDaily),
                       [&](const DailyStat& d) { return name.starts_with(d.prefix) && name.size() > d.prefix.size(); });
}

std::vector<std::string> feature_sources(const std::string& name) {
    if (is_calendar(name)) return {};
    if (lag_hours(name)) return {"#target"};
    if (const auto at = name.find('@'); at != std::string::npos) {
        auto a = feature_sources(name.substr(0, at));
        for (auto& s : feature_sources(name.substr(at + 1))) {
            if (std::find(a.begin(), a.end(), s) == a.end()) a.push_back(s);
        }
        return a;
    }
    for (const auto& d : kDaily) {
        if (name.starts_with(d.prefix) && name.size() > d.prefix.size()) return {name.substr(d.prefix.size())};
    }
    return {name};
}

FeatureFrame engineer_features(const RawInputs& inputs, std::span<const std::string> columns, const HolidayCalendar& holidays) {
    for (std::size_t i = 0; i < inputs.timestamps.size(); ++i) {
        const auto s = epoch_seconds(inputs.timestamps[i]);
        if (s % 3600 != 0) fail(ErrorCode::MisalignedTimestamps, format_rfc3339(inputs.timestamps[i]) + " is not on the hour");
        if (i > 0 && inputs.timestamps[i] <= inputs.timestamps[i - 1]) {
            fail(ErrorCode::MisalignedTimestamps, "timestamps are not strictly increasing at " + format_rfc3339(inputs.timestamps[i]));
        }
    }
    if (inputs.target && inputs.target->size() != inputs.timestamps.size()) {
        fail(ErrorCode::MisalignedTimestamps, "target length does not match timestamps");
    }
    FeatureFrame frame;
    frame.timestamps = inputs.timestamps;
    const Builder b(inputs, holidays);
    for (const auto& name : columns) {
        if (frame.has(name)) continue;
        frame.add(b.build(name));
    }
    if (inputs.target) {
        MaskedSeries t = *inputs.target;
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (!std::isfinite(t.values[i])) t.missing[i] = 1;
        }
        frame.target = std::move(t);
    }
    return frame;
}

} // namespace castorette::transform
