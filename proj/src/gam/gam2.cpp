#include "castorette/gam/gam2.hpp"

#include "castorette/error.hpp"
#include "castorette/gam/boost.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace castorette::gam {

using nlohmann::json;

namespace {

void append_unique(std::vector<std::string>& out, const std::vector<std::string>& names) {
    for (const auto& n : names) {
        if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(n);
    }
}

std::vector<std::string> spec_features(const std::vector<TermSpec>& specs) {
    std::vector<std::string> out;
    for (const auto& s : specs) append_unique(out, s.features);
    return out;
}

double sample_sd(std::span<const double> y) {
    if (y.size() < 2) return 0.0;
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double ss = 0.0;
    for (const double v : y) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(y.size() - 1));
}

std::vector<TermSpec> select_terms(const FeatureFrame& frame, std::span<const double> response,
                                   const std::vector<TermSpec>& candidates, const BoostingConfig& boosting) {
    if (!boosting.enabled) return candidates;
    auto picked = boost_select(frame, response, candidates, boosting.steps, boosting.step_size).selected;
    if (picked.empty()) fail(ErrorCode::InvalidArgument, "boosting selected no terms");
    // Keep the configured order so the fit does not depend on selection counts.
    std::vector<TermSpec> ordered;
    for (const auto& c : candidates) {
        if (std::find(picked.begin(), picked.end(), c) != picked.end()) ordered.push_back(c);
    }
    return ordered;
}

FitOptions options_for(Link link, const Gam2Config& config, std::size_t terms) {
    FitOptions o;
    o.link = link;
    if (config.lambda) o.lambdas = std::vector<double>(terms, *config.lambda);
    return o;
}

} // namespace

Gam2Config default_gam2_config() {
    Gam2Config c;
    c.mean_terms = {categorical_term("DayType"), spline_term("TimeOfDay"), spline_term("TimeOfYear"),
                    spline_term("Temperature"), spline_term("SolarRadiance")};
    c.variance_terms = {spline_term("TimeOfDay"), spline_term("DewPoint"), spline_term("DailyAverageTemperature")};
    return c;
}

json to_json(const Gam2Config& config) {
    json mean = json::array();
    json var = json::array();
    for (const auto& t : config.mean_terms) mean.push_back(to_json(t));
    for (const auto& t : config.variance_terms) var.push_back(to_json(t));
    json j{{"mean_terms", std::move(mean)},
           {"variance_terms", std::move(var)},
           {"lambda", nullptr},
           {"boosting",
            {{"enabled", config.boosting.enabled}, {"steps", config.boosting.steps}, {"step_size", config.boosting.step_size}}}};
    if (config.lambda) j["lambda"] = *config.lambda;
    return j;
}

Gam2Config gam2_config_from_json(const json& j) {
    Gam2Config c = default_gam2_config();
    if (!j.is_object()) fail(ErrorCode::ValidationError, "train config must be an object");
    try {
        if (j.contains("mean_terms")) {
            c.mean_terms.clear();
            for (const auto& t : j.at("mean_terms")) c.mean_terms.push_back(term_spec_from_json(t));
        }
        if (j.contains("variance_terms")) {
            c.variance_terms.clear();
            for (const auto& t : j.at("variance_terms")) c.variance_terms.push_back(term_spec_from_json(t));
        }
        if (j.contains("lambda") && !j.at("lambda").is_null()) {
            c.lambda = j.at("lambda").get<double>();
            if (!(*c.lambda >= 0.0)) fail(ErrorCode::ValidationError, "lambda must be >= 0");
        }
        if (j.contains("boosting")) {
            const auto& b = j.at("boosting");
            if (b.is_boolean()) {
                c.boosting.enabled = b.get<bool>();
            } else {
                c.boosting.enabled = b.value("enabled", false);
                c.boosting.steps = b.value("steps", c.boosting.steps);
                c.boosting.step_size = b.value("step_size", c.boosting.step_size);
            }
            if (!(c.boosting.step_size > 0.0 && c.boosting.step_size <= 1.0)) {
                fail(ErrorCode::ValidationError, "boosting step_size must be in (0, 1]");
            }
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::ValidationError, std::string("train config: ") + e.what());
    }
    if (c.mean_terms.empty()) fail(ErrorCode::ValidationError, "train config needs at least one mean term");
    if (c.variance_terms.empty()) fail(ErrorCode::ValidationError, "train config needs at least one variance term");
    return c;
}

std::vector<std::string> Gam2Artifact::required_features() const {
    std::vector<std::string> out = mean_model.features();
    append_unique(out, variance_model.features());
    return out;
}

Gam2Artifact fit_gam2(const FeatureFrame& frame, const Gam2Config& config) {
    if (!frame.target) fail(ErrorCode::InvalidArgument, "training frame has no target");
    std::vector<std::string> needed = spec_features(config.mean_terms);
    append_unique(needed, spec_features(config.variance_terms));
    const auto keep = frame.complete_rows(needed, true);
    const FeatureFrame train = frame.select_rows(keep);
    const std::vector<double>& y = train.target->values;

    Gam2Artifact a;
    a.target_sd = sample_sd(y);
    a.sigma_floor = 1e-6 * a.target_sd;

    const auto mean_terms = select_terms(train, y, config.mean_terms, config.boosting);
    a.mean_model = fit_additive(train, y, mean_terms, options_for(Link::Identity, config, mean_terms.size()));
    a.mean_features = a.mean_model.features();

    const Eigen::VectorXd fitted = a.mean_model.predict(train);
    std::vector<double> sq(y.size());
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    const double floor2 = a.sigma_floor * a.sigma_floor;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double r = y[i] - fitted(static_cast<Eigen::Index>(i));
        abs_sum += std::abs(r);
        sq_sum += r * r;
        sq[i] = std::max(r * r, floor2);
    }
    a.metrics.n = y.size();
    a.metrics.rmse = std::sqrt(sq_sum / static_cast<double>(y.size()));
    a.metrics.mae = abs_sum / static_cast<double>(y.size());

    const auto var_terms = select_terms(train, sq, config.variance_terms, config.boosting);
    a.variance_model = fit_additive(train, sq, var_terms, options_for(Link::Log, config, var_terms.size()));
    a.variance_features = a.variance_model.features();
    return a;
}

ForecastOutput score(const Gam2Artifact& artifact, const FeatureFrame& frame, Duration horizon) {
    for (const auto& name : artifact.required_features()) {
        const Column& c = frame.column(name);
        for (std::size_t i = 0; i < c.size(); ++i) {
            if (c.missing[i]) {
                fail(ErrorCode::MissingFeature, "'" + name + "' is missing at " + format_rfc3339(frame.timestamps[i]));
            }
        }
    }
    ForecastOutput out;
    out.timestamps = frame.timestamps;
    out.horizon = horizon;
    std::vector<std::uint8_t> mean_flags;
    std::vector<std::uint8_t> var_flags;
    const Eigen::VectorXd mu = artifact.mean_model.predict(frame, &mean_flags);
    const Eigen::VectorXd var = artifact.variance_model.predict(frame, &var_flags);
    const std::size_t n = frame.rows();
    out.mu.resize(n);
    out.sigma.resize(n);
    out.clamped.assign(n, 0);
    const double floor = artifact.sigma_floor > 0.0 ? artifact.sigma_floor : std::numeric_limits<double>::min();
    for (std::size_t i = 0; i < n; ++i) {
        out.mu[i] = mu(static_cast<Eigen::Index>(i));
        out.sigma[i] = std::max(std::sqrt(var(static_cast<Eigen::Index>(i))), floor);
        out.clamped[i] = (i < mean_flags.size() && mean_flags[i]) || (i < var_flags.size() && var_flags[i]);
    }
    return out;
}

std::string serialize(const Gam2Artifact& a) {
    const json j{{"format", "castorette.gam2"},
                 {"version", kArtifactFormatVersion},
                 {"mean_model", to_json(a.mean_model)},
                 {"variance_model", to_json(a.variance_model)},
                 {"mean_features", a.mean_features},
                 {"variance_features", a.variance_features},
                 {"metrics", {{"rmse", a.metrics.rmse}, {"mae", a.metrics.mae}, {"n", a.metrics.n}}},
                 {"target_sd", a.target_sd},
                 {"sigma_floor", a.sigma_floor}};
    return j.dump();
}

Gam2Artifact deserialize_artifact(std::string_view blob) {
    json j;
    try {
        j = json::parse(blob);
    } catch (const json::exception& e) {
        fail(ErrorCode::CorruptParams, std::string("params are not JSON: ") + e.what());
    }
    try {
        if (j.at("format") != "castorette.gam2") fail(ErrorCode::CorruptParams, "unknown params format");
        if (j.at("version").get<int>() != kArtifactFormatVersion) {
            fail(ErrorCode::CorruptParams, "unsupported params version " + j.at("version").dump());
        }
        Gam2Artifact a;
        a.mean_model = additive_from_json(j.at("mean_model"));
        a.variance_model = additive_from_json(j.at("variance_model"));
        if (a.mean_model.link != Link::Identity || a.variance_model.link != Link::Log) {
            fail(ErrorCode::CorruptParams, "stage links do not match");
        }
        a.mean_features = j.at("mean_features").get<std::vector<std::string>>();
        a.variance_features = j.at("variance_features").get<std::vector<std::string>>();
        const auto& m = j.at("metrics");
        a.metrics = TrainMetrics{m.at("rmse"), m.at("mae"), m.at("n")};
        a.target_sd = j.at("target_sd");
        a.sigma_floor = j.at("sigma_floor");
        return a;
    } catch (const json::exception& e) {
        fail(ErrorCode::CorruptParams, e.what());
    }
}

} // namespace castorette::gam
