#include "castorette/error.hpp"
#include "castorette/transform.hpp"

#include <cmath>

namespace castorette::transform {

using nlohmann::json;

namespace {

std::string_view kind_name(Step::Kind k) {
    switch (k) {
    case Step::Kind::Outliers: return "outliers";
    case Step::Kind::Pelt: return "pelt";
    case Step::Kind::Transfer: return "transfer";
    case Step::Kind::Features: return "features";
    }
    return "outliers";
}

Step parse_one(const json& j) {
    if (!j.is_object()) fail(ErrorCode::ValidationError, "step must be an object");
    Step s;
    const auto name = j.at("step").get<std::string>();
    if (name == "outliers") s.kind = Step::Kind::Outliers;
    else if (name == "pelt") s.kind = Step::Kind::Pelt;
    else if (name == "transfer") s.kind = Step::Kind::Transfer;
    else if (name == "features") s.kind = Step::Kind::Features;
    else fail(ErrorCode::ValidationError, "unknown step '" + name + "'");

    s.series = j.value("series", std::string("target"));
    auto& c = s.cleaning;
    c.allow_negative = j.value("allow_negative", c.allow_negative);
    c.max_constant_run = j.value("max_constant_run", c.max_constant_run);
    c.deviation_threshold = j.value("deviation_threshold", c.deviation_threshold);
    c.min_remaining_fraction = j.value("min_remaining_fraction", c.min_remaining_fraction);
    if (j.contains("penalty")) {
        const auto& p = j.at("penalty");
        if (p.is_string()) {
            if (p.get<std::string>() != "auto") fail(ErrorCode::ValidationError, "penalty must be a number or \"auto\"");
        } else {
            c.pelt_penalty = p.get<double>();
        }
    }
    c.validate();
    if (s.kind == Step::Kind::Features) {
        s.columns = j.at("columns").get<std::vector<std::string>>();
        if (s.columns.empty()) fail(ErrorCode::ValidationError, "features step lists no columns");
    }
    return s;
}

MaskedSeries* series_of(RawInputs& in, const std::string& name) {
    if (name == "target") return in.target ? &*in.target : nullptr;
    const auto it = in.covariates.find(name);
    if (it == in.covariates.end()) fail(ErrorCode::MissingCovariate, "transform step reads unknown series '" + name + "'");
    return &it->second;
}

void note(StepLog* log, std::string line) {
    if (log) log->lines.push_back(std::move(line));
}

} // namespace

std::vector<Step> parse_steps(const json& j) {
    if (j.is_null()) return {};
    if (!j.is_array()) fail(ErrorCode::ValidationError, "transform must be a list of steps");
    std::vector<Step> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        try {
            out.push_back(parse_one(j[i]));
        } catch (const json::exception& e) {
            fail(ErrorCode::ValidationError, "transform step " + std::to_string(i) + ": " + e.what());
        } catch (const Error& e) {
            fail(ErrorCode::ValidationError, "transform step " + std::to_string(i) + ": " + e.detail());
        }
    }
    return out;
}

json to_json(const Step& s) {
    json j{{"step", kind_name(s.kind)}};
    if (s.kind == Step::Kind::Features) {
        j["columns"] = s.columns;
        return j;
    }
    j["series"] = s.series;
    if (s.kind == Step::Kind::Outliers) {
        j["allow_negative"] = s.cleaning.allow_negative;
        j["max_constant_run"] = s.cleaning.max_constant_run;
        return j;
    }
    j["penalty"] = s.cleaning.pelt_penalty ? json(*s.cleaning.pelt_penalty) : json("auto");
    if (s.kind == Step::Kind::Pelt) {
        j["deviation_threshold"] = s.cleaning.deviation_threshold;
        j["min_remaining_fraction"] = s.cleaning.min_remaining_fraction;
    }
    return j;
}

void apply_cleaning(RawInputs& inputs, std::span<const Step> steps, StepLog* log) {
    for (const auto& step : steps) {
        if (step.kind == Step::Kind::Features) continue;
        MaskedSeries* s = series_of(inputs, step.series);
        if (!s) {
            note(log, std::string(kind_name(step.kind)) + ": no '" + step.series + "' series, skipped");
            continue;
        }
        switch (step.kind) {
        case Step::Kind::Outliers: {
            auto [cleaned, report] = remove_outliers(*s, step.cleaning);
            *s = std::move(cleaned);
            note(log, "outliers: " + std::to_string(report.flagged.size()) + " values masked in " + step.series);
            break;
        }
        case Step::Kind::Pelt: {
            auto [cleaned, removed] = iterative_segment_removal(*s, step.cleaning);
            *s = std::move(cleaned);
            note(log, "pelt: " + std::to_string(removed.size()) + " segments removed from " + step.series);
            break;
        }
        case Step::Kind::Transfer: {
            const auto idx = s->present_indices();
            const auto x = s->present_values();
            if (x.size() < 2) break;
            PeltOptions opt;
            opt.variance = std::pow(robust_noise_sd(x), 2);
            const auto seg = pelt(x, step.cleaning.pelt_penalty.value_or(default_penalty(x.size())), opt);
            if (seg.changepoints.empty()) {
                note(log, "transfer: no change point in " + step.series);
                break;
            }
            const std::size_t cp = idx[seg.changepoints.back()];
            try {
                const auto tf = fit_transfer(*s, cp);
                *s = apply_transfer(*s, tf);
                note(log, "transfer: re-aligned [0, " + std::to_string(cp) + ") of " + step.series);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::TooShort) throw;
                note(log, "transfer: skipped, " + e.detail());
            }
            break;
        }
        case Step::Kind::Features: break;
        }
    }
}

std::vector<std::string> feature_columns(std::span<const Step> steps, const std::vector<std::string>& fallback) {
    for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
        if (it->kind == Step::Kind::Features) return it->columns;
    }
    return fallback;
}

} // namespace castorette::transform
