#include "castorette/pipeline.hpp"

#include "castorette/error.hpp"

#include <algorithm>
#include <charconv>

namespace castorette {

using nlohmann::json;

std::string_view to_string(TaskKind kind) noexcept { return kind == TaskKind::Train ? "train" : "score"; }

TaskKind task_kind_from_string(std::string_view text) {
    if (text == "train" || text == "TRAIN") return TaskKind::Train;
    if (text == "score" || text == "SCORE") return TaskKind::Score;
    fail(ErrorCode::ValidationError, "unknown task '" + std::string(text) + "'");
}

void DeploymentConfig::validate() const {
    if (repeat < Duration{0}) fail(ErrorCode::ValidationError, "repeat must be >= 0");
    if (until && *until < time) fail(ErrorCode::ValidationError, "until is before time");
}

json to_json(const DeploymentConfig& c) {
    return json{{"task", to_string(c.task)},
                {"time", format_rfc3339(c.time)},
                {"repeat", format_iso_duration(c.repeat)},
                {"until", c.until ? json(format_rfc3339(*c.until)) : json(nullptr)}};
}

DeploymentConfig deployment_from_json(const json& j) {
    if (!j.is_object()) fail(ErrorCode::ValidationError, "deployment config must be an object");
    DeploymentConfig c;
    try {
        c.task = task_kind_from_string(j.at("task").get<std::string>());
        c.time = parse_rfc3339(j.at("time").get<std::string>());
        if (j.contains("repeat") && !j.at("repeat").is_null()) c.repeat = parse_iso_duration(j.at("repeat").get<std::string>());
        if (j.contains("until") && !j.at("until").is_null()) c.until = parse_rfc3339(j.at("until").get<std::string>());
    } catch (const json::exception& e) {
        fail(ErrorCode::ValidationError, std::string("deployment config: ") + e.what());
    } catch (const Error& e) {
        fail(ErrorCode::ValidationError, "deployment config: " + e.detail());
    }
    c.validate();
    return c;
}

namespace {

std::size_t lag_of(const std::string& name) {
    std::size_t best = 0;
    std::size_t start = 0;
    while (start <= name.size()) {
        const auto at = name.find('@', start);
        const std::string part = name.substr(start, at == std::string::npos ? std::string::npos : at - start);
        if (part.starts_with("lag_")) {
            std::size_t h = 0;
            const auto* b = part.data() + 4;
            const auto* e = part.data() + part.size();
            if (std::from_chars(b, e, h).ptr == e) best = std::max(best, h);
        }
        if (at == std::string::npos) break;
        start = at + 1;
    }
    return best;
}

ContextRef parse_ref(const json& j, const std::optional<std::string>& default_entity) {
    if (j.is_string()) {
        if (!default_entity) fail(ErrorCode::ValidationError, "a bare signal name needs a target entity");
        return {*default_entity, j.get<std::string>()};
    }
    ContextRef r;
    r.signal = j.at("signal").get<std::string>();
    if (j.contains("entity")) r.entity = j.at("entity").get<std::string>();
    else if (default_entity) r.entity = *default_entity;
    else fail(ErrorCode::ValidationError, "context reference needs an entity");
    return r;
}

json ref_json(const ContextRef& r) { return json{{"entity", r.entity}, {"signal", r.signal}}; }

Duration duration_field(const json& obj, const char* key, Duration fallback) {
    if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
    return parse_iso_duration(obj.at(key).get<std::string>());
}

std::string resolve_note(const ContextStore* context, const ContextRef& r) {
    if (!context) return {};
    try {
        context->resolve_context(r.entity, r.signal);
        return {};
    } catch (const Error& e) {
        return std::string(to_string(e.code())) + " " + r.entity + "/" + r.signal + ": " + e.detail();
    }
}

PipelineSpec parse(const json& j, const ContextStore* context, const std::optional<ContextRef>& default_target,
                   std::vector<Diagnostic>& diags) {
    PipelineSpec p;
    auto add = [&](const char* step, std::string msg) { diags.push_back({step, std::move(msg)}); };
    if (!j.is_object()) {
        add("load", "pipeline must be an object");
        return p;
    }

    bool target_ok = false;
    try {
        const json load = j.value("load", json::object());
        if (load.contains("target")) {
            p.load.target = parse_ref(load.at("target"), default_target ? std::optional(default_target->entity) : std::nullopt);
            target_ok = true;
        } else if (default_target) {
            p.load.target = *default_target;
            target_ok = true;
        } else {
            add("load", "no target series");
        }
        if (target_ok) {
            if (auto note = resolve_note(context, p.load.target); !note.empty()) add("load", "target " + note);
            if (default_target && !(p.load.target == *default_target)) add("load", "load target differs from the model target");
        }
        if (load.contains("covariates")) {
            const auto& cov = load.at("covariates");
            if (!cov.is_object()) {
                add("load", "covariates must map column names to series");
            } else {
                for (const auto& [column, ref] : cov.items()) {
                    try {
                        p.load.covariates[column] = parse_ref(ref, target_ok ? std::optional(p.load.target.entity) : std::nullopt);
                        if (auto note = resolve_note(context, p.load.covariates[column]); !note.empty()) {
                            add("load", "covariate '" + column + "' " + note);
                        }
                    } catch (const std::exception& e) {
                        add("load", "covariate '" + column + "': " + e.what());
                    }
                }
            }
        }
        p.load.train_window = duration_field(load, "train_window", p.load.train_window);
        p.load.score_horizon = duration_field(load, "score_horizon", p.load.score_horizon);
        if (p.load.train_window <= Duration{0}) add("load", "train_window must be positive");
        if (p.load.score_horizon <= Duration{0}) add("load", "score_horizon must be positive");
    } catch (const std::exception& e) {
        add("load", e.what());
    }

    try {
        p.transform = transform::parse_steps(j.value("transform", json::array()));
        for (std::size_t i = 0; i < p.transform.size(); ++i) {
            const auto& s = p.transform[i];
            if (s.kind != transform::Step::Kind::Features && s.series != "target" && !p.load.covariates.contains(s.series)) {
                add("transform", "step " + std::to_string(i) + " reads unknown series '" + s.series + "'");
            }
        }
    } catch (const Error& e) {
        add("transform", e.detail());
    }

    bool train_ok = false;
    try {
        p.train = j.contains("train") ? gam::gam2_config_from_json(j.at("train")) : gam::default_gam2_config();
        train_ok = true;
    } catch (const Error& e) {
        add("train", e.detail());
    }
    if (train_ok) {
        const auto columns = p.feature_columns();
        bool has_input = false;
        for (const auto* terms : {&p.train.mean_terms, &p.train.variance_terms}) {
            for (const auto& term : *terms) {
                for (const auto& f : term.features) {
                    if (std::find(columns.begin(), columns.end(), f) == columns.end()) {
                        add("train", "term " + term.label() + " uses '" + f + "', which the features step does not produce");
                    }
                }
            }
        }
        for (const auto& col : columns) {
            for (const auto& src : transform::feature_sources(col)) {
                if (src == "#target") {
                    has_input = true;
                } else if (p.load.covariates.contains(src)) {
                    has_input = true;
                } else if (!src.empty()) {
                    add("train", "feature '" + col + "' needs covariate '" + src + "', which load does not provide");
                }
            }
        }
        if (!has_input) add("train", "at least one covariate or lag feature is required");
    }

    try {
        const json score = j.value("score", json::object());
        p.score.repeat = duration_field(score, "repeat", p.score.repeat);
        p.score.delay = duration_field(score, "delay", p.score.delay);
        p.score.retire_previous = score.value("retire_previous", p.score.retire_previous);
        if (p.score.repeat < Duration{0}) add("score", "repeat must be >= 0");
        if (p.score.delay < Duration{0}) add("score", "delay must be >= 0");
    } catch (const std::exception& e) {
        add("score", e.what());
    }
    return p;
}

} // namespace

std::vector<std::string> PipelineSpec::feature_columns() const {
    std::vector<std::string> fallback;
    for (const auto* terms : {&train.mean_terms, &train.variance_terms}) {
        for (const auto& t : *terms) {
            for (const auto& f : t.features) {
                if (std::find(fallback.begin(), fallback.end(), f) == fallback.end()) fallback.push_back(f);
            }
        }
    }
    return transform::feature_columns(transform, fallback);
}

Duration PipelineSpec::lag_history() const {
    std::size_t hours = 0;
    for (const auto& c : feature_columns()) hours = std::max(hours, lag_of(c));
    return Duration{static_cast<std::int64_t>(hours) * 3600};
}

std::vector<Diagnostic> validate_pipeline(const json& j, const ContextStore& context,
                                          const std::optional<ContextRef>& default_target) {
    std::vector<Diagnostic> diags;
    parse(j, &context, default_target, diags);
    return diags;
}

PipelineSpec parse_pipeline(const json& j, const ContextStore& context, const std::optional<ContextRef>& default_target) {
    return pipeline_from_json(j, &context, default_target);
}

PipelineSpec pipeline_from_json(const json& j, const ContextStore* context, const std::optional<ContextRef>& default_target) {
    std::vector<Diagnostic> diags;
    PipelineSpec p = parse(j, context, default_target, diags);
    if (!diags.empty()) {
        std::string msg;
        for (const auto& d : diags) msg += (msg.empty() ? "" : "; ") + d.step + ": " + d.message;
        fail(ErrorCode::ValidationError, msg);
    }
    return p;
}

json diagnostics_json(const std::vector<Diagnostic>& diagnostics) {
    json out = json::array();
    for (const auto& d : diagnostics) out.push_back({{"step", d.step}, {"message", d.message}});
    return out;
}

json to_json(const PipelineSpec& spec) {
    json cov = json::object();
    for (const auto& [name, ref] : spec.load.covariates) cov[name] = ref_json(ref);
    json steps = json::array();
    for (const auto& s : spec.transform) steps.push_back(transform::to_json(s));
    return json{{"load",
                 {{"target", ref_json(spec.load.target)},
                  {"covariates", cov},
                  {"train_window", format_iso_duration(spec.load.train_window)},
                  {"score_horizon", format_iso_duration(spec.load.score_horizon)}}},
                {"transform", steps},
                {"train", gam::to_json(spec.train)},
                {"score",
                 {{"repeat", format_iso_duration(spec.score.repeat)},
                  {"delay", format_iso_duration(spec.score.delay)},
                  {"retire_previous", spec.score.retire_previous}}}};
}

std::pair<Timestamp, Timestamp> window_for(TaskKind task, Timestamp due, const PipelineSpec& pipeline) {
    if (task == TaskKind::Train) return {due - pipeline.load.train_window, due};
    return {due, due + pipeline.load.score_horizon};
}

} // namespace castorette
