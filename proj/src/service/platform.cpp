#include "castorette/error.hpp"
#include "castorette/service.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace castorette {

using nlohmann::json;

// ---- config and reports ------------------------------------------------------

ServiceConfig ServiceConfig::from_json(const json& j) {
    if (!j.is_object()) fail(ErrorCode::ValidationError, "config must be an object");
    ServiceConfig c;
    try {
        c.port = j.value("port", c.port);
        c.data_dir = j.value("data_dir", std::string{});
        c.workers = j.value("workers", c.workers);
        if (j.contains("holidays") && !j.at("holidays").is_null()) c.holidays = j.at("holidays").get<std::string>();
        c.default_entity_type = j.value("default_entity_type", c.default_entity_type);
        c.default_signal_type = j.value("default_signal_type", c.default_signal_type);
        c.strict_ingest = j.value("strict_ingest", c.strict_ingest);
    } catch (const json::exception& e) {
        fail(ErrorCode::ValidationError, std::string("config: ") + e.what());
    }
    if (c.port < 0 || c.port > 65535) fail(ErrorCode::ValidationError, "port out of range");
    return c;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Io, "cannot open config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail(ErrorCode::ValidationError, path.string() + ": " + e.what());
    }
    ServiceConfig c = from_json(j);
    // Relative paths are relative to the config file.
    const auto base = path.parent_path();
    if (!c.data_dir.empty() && c.data_dir.is_relative()) c.data_dir = base / c.data_dir;
    if (c.holidays && c.holidays->is_relative()) c.holidays = base / *c.holidays;
    return c;
}

json to_json(const CsvReport& r) {
    json errors = json::array();
    for (const auto& e : r.errors) errors.push_back({{"line", e.line}, {"error", e.error}, {"detail", e.detail}});
    return json{{"rows", r.rows}, {"stored", r.stored}, {"errors", std::move(errors)}};
}

CsvReport csv_report_from_json(const json& j) {
    CsvReport r;
    r.rows = j.at("rows");
    r.stored = j.at("stored");
    for (const auto& e : j.at("errors")) r.errors.push_back({e.at("line"), e.at("error"), e.at("detail")});
    return r;
}

// ---- helpers -------------------------------------------------------------------

namespace {

std::optional<std::int64_t> opt_id(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    const auto& v = j.at(key);
    if (v.is_string()) {
        const auto& s = v.get_ref<const std::string&>();
        if (s.empty() || s == "latest") return std::nullopt;
        std::int64_t out = 0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
        if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) fail(ErrorCode::InvalidArgument, std::string(key) + " must be an id");
        return out;
    }
    return v.get<std::int64_t>();
}

std::string str(const json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_string()) fail(ErrorCode::InvalidArgument, std::string("missing '") + key + "'");
    return j.at(key).get<std::string>();
}

bool flag(const json& j, const char* key, bool fallback) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    const auto& v = j.at(key);
    if (v.is_boolean()) return v.get<bool>();
    if (v.is_string()) return v == "true" || v == "1";
    return fallback;
}

json layer_json(const LayerInfo& l) {
    return json{{"id", l.id.value},
                {"kind", to_string(l.kind)},
                {"producer", l.producer ? json(l.producer->value) : json(nullptr)},
                {"anchor", l.anchor ? json(format_rfc3339(*l.anchor)) : json(nullptr)},
                {"created_at", format_rfc3339(l.created_at)}};
}

json opt_num(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string trim_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

} // namespace

// ---- platform ------------------------------------------------------------------

Platform::Platform(const ServiceConfig& config, Clock clock) : config_(config), clock_(clock) {
    if (config_.holidays) holidays_ = transform::HolidayCalendar::load(*config_.holidays);
    if (!config_.data_dir.empty()) std::filesystem::create_directories(config_.data_dir);
    auto now = [this] { return clock_.now(); };
    context_ = std::make_unique<ContextStore>(config_.data_dir);
    series_ = std::make_unique<TimeSeriesStore>(*context_, config_.data_dir, now);
    models_ = std::make_unique<ModelStore>(*context_, config_.data_dir, now);
    bus_ = std::make_unique<Bus>(BusOptions{});
    RunnerOptions ro;
    ro.holidays = holidays_;
    runner_ = std::make_unique<Runner>(*bus_, ro);
    SchedulerOptions so;
    so.workers = workers_from_env(config_.workers);
    scheduler_ = std::make_unique<Scheduler>([this] { return schedules(); }, runner_->executor(), clock_, so);
    register_handlers();
}

Platform::~Platform() {
    scheduler_->stop();
    scheduler_->wait_idle();
    scheduler_.reset();
    bus_.reset();
}

void Platform::checkpoint() {
    context_->checkpoint();
    series_->checkpoint();
    models_->checkpoint();
}

std::vector<ScheduleEntry> Platform::schedules() {
    const json reply = bus_->request(queues::kModelSchedules, json::object());
    std::vector<ScheduleEntry> out;
    for (const auto& e : reply.at("entries")) {
        ScheduleEntry s;
        s.task = task_kind_from_string(e.at("task").get<std::string>());
        s.subject = e.at("subject");
        s.config = deployment_from_json(e.at("config"));
        if (!e.at("last_done").is_null()) s.last_done = parse_rfc3339(e.at("last_done").get<std::string>());
        out.push_back(std::move(s));
    }
    return out;
}

CsvReport Platform::ingest_csv(std::istream& in, std::optional<bool> strict) {
    std::stringstream ss;
    ss << in.rdbuf();
    return csv_report_from_json(bus_->request(queues::kTsIngestCsv,
                                              {{"csv", ss.str()}, {"strict", strict.value_or(config_.strict_ingest)}},
                                              std::chrono::minutes(5)));
}

CsvReport Platform::ingest_csv(const std::filesystem::path& path, std::optional<bool> strict) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
    return ingest_csv(in, strict);
}

json Platform::ingest_csv_text(const std::string& text, bool strict) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || trim_cr(line) != "ts,entity,signal,value") {
        fail(ErrorCode::MalformedRow, "line 1: header must be exactly 'ts,entity,signal,value'");
    }
    CsvReport report;
    struct Row {
        SeriesPoint p;
        std::size_t line;
    };
    std::map<ContextKey, std::vector<Row>> groups;
    std::map<std::pair<std::string, std::string>, ContextKey> resolved;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim_cr(line);
        if (line.empty()) continue;
        ++report.rows;
        auto reject = [&](ErrorCode code, std::string detail) {
            report.errors.push_back({lineno, std::string(to_string(code)), std::move(detail)});
        };
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (!line.empty() && line.back() == ',') f.emplace_back();
        if (f.size() != 4) {
            reject(ErrorCode::MalformedRow, "expected 4 fields, got " + std::to_string(f.size()));
            continue;
        }
        Timestamp ts;
        try {
            ts = parse_rfc3339(f[0]);
        } catch (const Error& e) {
            reject(ErrorCode::MalformedRow, "bad timestamp '" + f[0] + "'");
            continue;
        }
        double value = 0.0;
        const auto res = std::from_chars(f[3].data(), f[3].data() + f[3].size(), value);
        if (f[3].empty() || res.ec != std::errc{} || res.ptr != f[3].data() + f[3].size()) {
            reject(ErrorCode::MalformedRow, "bad value '" + f[3] + "'");
            continue;
        }
        if (!std::isfinite(value)) {
            reject(ErrorCode::NonFiniteValue, "value '" + f[3] + "'");
            continue;
        }
        if (f[1].empty() || f[2].empty()) {
            reject(ErrorCode::MalformedRow, "empty entity or signal");
            continue;
        }
        const auto names = std::make_pair(f[1], f[2]);
        auto it = resolved.find(names);
        if (it == resolved.end()) {
            try {
                it = resolved.emplace(names, context_->resolve_context(f[1], f[2])).first;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::NotFound || strict) {
                    reject(e.code() == ErrorCode::NotFound ? ErrorCode::UnknownContext : e.code(), e.detail());
                    continue;
                }
                try {
                    context_->register_entity_type(config_.default_entity_type);
                    context_->register_signal_type(config_.default_signal_type);
                    try {
                        context_->find_entity(NameRef{f[1], {}});
                    } catch (const Error& fe) {
                        if (fe.code() != ErrorCode::NotFound) throw;
                        context_->upsert_entity(f[1], config_.default_entity_type);
                    }
                    try {
                        context_->find_signal(NameRef{f[2], {}});
                    } catch (const Error& fe) {
                        if (fe.code() != ErrorCode::NotFound) throw;
                        context_->upsert_signal(f[2], config_.default_signal_type);
                    }
                    it = resolved.emplace(names, context_->resolve_context(f[1], f[2])).first;
                } catch (const Error& ce) {
                    reject(ce.code(), ce.detail());
                    continue;
                }
            }
        }
        groups[it->second].push_back({{ts, value}, lineno});
    }

    std::vector<IngestRequest> batch;
    for (auto& [key, rows] : groups) {
        // Stable, so a repeated timestamp keeps file order and the last wins.
        std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.p.ts < b.p.ts; });
        IngestRequest r;
        r.key = key;
        for (const auto& row : rows) r.points.push_back(row.p);
        batch.push_back(std::move(r));
    }
    if (!batch.empty()) {
        for (const auto n : series_->ingest_batch(batch)) report.stored += n;
    }
    return to_json(report);
}

void Platform::register_handlers() {
    Bus& bus = *bus_;
    ContextStore& ctx = *context_;
    TimeSeriesStore& ts = *series_;
    ModelStore& ms = *models_;

    auto key_of = [&ctx](const json& j) { return ctx.resolve_context(str(j, "entity"), str(j, "signal")); };

    // Forecast reads default to the newest layer, unless a model on this
    // context pins an active version.
    auto default_producer = [&ms](const ContextKey& key) -> std::optional<VersionId> {
        for (const auto& m : ms.list_models_for_context(key.entity, key.signal, false)) {
            if (m.target == key && m.active_version) return m.active_version;
        }
        return std::nullopt;
    };

    bus.register_handler(queues::kTsQuery, [&, key_of, default_producer](const json& j) {
        RangeQuery q;
        q.key = key_of(j);
        q.from = parse_rfc3339(str(j, "from"));
        q.to = parse_rfc3339(str(j, "to"));
        if (q.from > q.to) fail(ErrorCode::InvalidArgument, "from is after to");
        q.kind = series_kind_from_string(j.value("kind", std::string("observed")));
        if (const auto p = opt_id(j, "producer")) q.producer = VersionId{*p};
        if (q.kind == SeriesKind::Forecast && !q.producer) q.producer = default_producer(q.key);
        json out{{"points", points_json(ts.query(q))}};
        if (q.kind == SeriesKind::Forecast) {
            const auto layer = ts.select_layer(q.key, q.kind, q.producer);
            out["layer"] = layer ? layer_json(*layer) : json(nullptr);
        }
        return out;
    });

    bus.register_handler(queues::kTsIngest, [&, key_of](const json& j) {
        std::vector<IngestRequest> batch;
        const json list = j.contains("requests") ? j.at("requests") : json::array({j});
        for (const auto& r : list) {
            IngestRequest req;
            const std::string signal = str(r, "signal");
            const std::string suffix = sigma_signal_name("");
            // A σ sibling is created on first use, under its base signal's type.
            if (signal.ends_with(suffix) && signal.size() > suffix.size()) {
                const Signal base = ctx.find_signal(NameRef{signal.substr(0, signal.size() - suffix.size()), {}});
                ctx.upsert_signal(signal, ctx.signal_type(base.type).name, base.unit);
            }
            req.key = key_of(r);
            req.kind = series_kind_from_string(r.value("kind", std::string("observed")));
            if (const auto p = opt_id(r, "producer")) req.producer = VersionId{*p};
            if (r.contains("anchor") && !r.at("anchor").is_null()) req.anchor = parse_rfc3339(r.at("anchor").get<std::string>());
            req.points = points_from_json(r.at("points"));
            batch.push_back(std::move(req));
        }
        const auto counts = ts.ingest_batch(batch);
        json layers = json::array();
        for (const auto& req : batch) {
            std::optional<LayerInfo> found;
            for (const auto& l : ts.layers(req.key)) {
                if (l.kind == req.kind && l.producer == req.producer && l.anchor == req.anchor) found = l;
            }
            layers.push_back(found ? json(found->id.value) : json(nullptr));
        }
        return json{{"counts", counts}, {"layers", layers}};
    });

    bus.register_handler(queues::kTsIngestCsv, [this](const json& j) {
        return ingest_csv_text(str(j, "csv"), flag(j, "strict", config_.strict_ingest));
    });

    bus.register_handler(queues::kTsCompare, [&, key_of, default_producer](const json& j) {
        const ContextKey key = key_of(j);
        const Timestamp from = parse_rfc3339(str(j, "from"));
        const Timestamp to = parse_rfc3339(str(j, "to"));
        std::optional<VersionId> version;
        if (const auto v = opt_id(j, "version")) version = VersionId{*v};
        if (!version) version = default_producer(key);
        json rows = json::array();
        for (const auto& r : ts.forecast_vs_observed(key, from, to, version)) {
            rows.push_back({{"ts", format_rfc3339(r.ts)},
                            {"observed", opt_num(r.observed)},
                            {"forecast", opt_num(r.forecast)},
                            {"sigma", opt_num(r.sigma)},
                            {"lower", opt_num(r.lower)},
                            {"upper", opt_num(r.upper)},
                            {"version", r.producer ? json(r.producer->value) : json(nullptr)}});
        }
        return json{{"rows", std::move(rows)}};
    });

    bus.register_handler(queues::kContextGraph, [&ctx](const json& j) {
        GraphLayers layers;
        layers.series = flag(j, "series", true);
        layers.models = flag(j, "models", true);
        return ctx.export_context_graph(layers);
    });

    bus.register_handler(queues::kModelValidate, [&ctx](const json& j) {
        const ModelInput in = model_input_from_json(j);
        return json{{"diagnostics", diagnostics_json(validate_pipeline(in.pipeline, ctx, in.target))}};
    });

    bus.register_handler(queues::kModelPut, [&ms](const json& j) {
        const ModelId id = ms.store_model(model_input_from_json(j));
        return to_json(ms.model(id));
    });

    bus.register_handler(queues::kModelGet, [&ms](const json& j) {
        if (const auto v = opt_id(j, "version")) return to_json(ms.version(VersionId{*v}), flag(j, "params", true));
        const auto m = opt_id(j, "model");
        if (!m) fail(ErrorCode::InvalidArgument, "model.get needs 'model' or 'version'");
        return to_json(ms.model(ModelId{*m}));
    });

    auto scope = [&ctx](const json& j) {
        std::pair<std::optional<EntityId>, std::optional<SignalId>> out;
        if (j.contains("entity") && j.at("entity").is_string() && !j.at("entity").get<std::string>().empty()) {
            out.first = ctx.find_entity(NameRef{j.at("entity").get<std::string>(), {}}).id;
        }
        if (j.contains("signal") && j.at("signal").is_string() && !j.at("signal").get<std::string>().empty()) {
            out.second = ctx.find_signal(NameRef{j.at("signal").get<std::string>(), {}}).id;
        }
        return out;
    };

    bus.register_handler(queues::kModelList, [&ms, scope](const json& j) {
        const auto [entity, signal] = scope(j);
        json models = json::array();
        for (const auto& m : ms.list_models_for_context(entity, signal, flag(j, "include_related", false))) {
            models.push_back(to_json(m));
        }
        return json{{"models", std::move(models)}};
    });

    bus.register_handler(queues::kModelHierarchy, [&ms, scope](const json& j) {
        const auto [entity, signal] = scope(j);
        return ms.model_hierarchy(entity, signal);
    });

    bus.register_handler(queues::kModelVersions, [&ms](const json& j) {
        const auto m = opt_id(j, "model");
        if (!m) fail(ErrorCode::InvalidArgument, "missing 'model'");
        json versions = json::array();
        for (const auto& v : ms.versions(ModelId{*m})) versions.push_back(to_json(v));
        return json{{"model", *m}, {"versions", std::move(versions)}};
    });

    bus.register_handler(queues::kModelActivate, [&ms](const json& j) {
        const auto m = opt_id(j, "model");
        if (!m) fail(ErrorCode::InvalidArgument, "missing 'model'");
        std::optional<VersionId> v;
        if (const auto id = opt_id(j, "version")) v = VersionId{*id};
        ms.activate_version(ModelId{*m}, v);
        const auto eff = ms.effective_version(ModelId{*m});
        return json{{"model", *m},
                    {"active_version", v ? json(v->value) : json(nullptr)},
                    {"effective_version", eff ? json(eff->id.value) : json(nullptr)}};
    });

    bus.register_handler(queues::kModelPutVersion, [&ms](const json& j) {
        VersionInput in;
        const auto m = opt_id(j, "model");
        if (!m) fail(ErrorCode::InvalidArgument, "missing 'model'");
        in.model = ModelId{*m};
        in.params = str(j, "params");
        in.score_schedule = deployment_from_json(j.at("score_schedule"));
        if (j.contains("metrics")) in.metrics = j.at("metrics").get<std::map<std::string, double>>();
        if (j.contains("anchor") && !j.at("anchor").is_null()) in.anchor = parse_rfc3339(j.at("anchor").get<std::string>());
        const auto previous = ms.latest_version(in.model);
        const StoredVersion stored = ms.store_version(in);
        if (stored.created && previous && flag(j, "retire_previous", true)) {
            // The replaced version stops scoring where the new one starts.
            auto sched = previous->score_schedule;
            const Timestamp stop = std::max(sched.time, in.score_schedule.time - Duration{1});
            if (!sched.until || *sched.until > stop) {
                sched.until = stop;
                ms.update_score_schedule(previous->id, sched);
            }
        }
        return json{{"version", stored.id.value}, {"created", stored.created}};
    });

    bus.register_handler(queues::kModelSchedules, [&ms, &ts](const json&) {
        json entries = json::array();
        for (const auto& m : ms.models()) {
            std::optional<Timestamp> last;
            for (const auto& v : ms.versions(m.id)) {
                if (v.anchor && (!last || *v.anchor > *last)) last = v.anchor;
                std::optional<Timestamp> scored;
                for (const auto& l : ts.forecast_layers_of(v.id)) {
                    if (l.anchor && (!scored || *l.anchor > *scored)) scored = l.anchor;
                }
                entries.push_back({{"task", "score"},
                                   {"subject", v.id.value},
                                   {"config", to_json(v.score_schedule)},
                                   {"last_done", scored ? json(format_rfc3339(*scored)) : json(nullptr)}});
            }
            entries.push_back({{"task", "train"},
                               {"subject", m.id.value},
                               {"config", to_json(m.train_schedule)},
                               {"last_done", last ? json(format_rfc3339(*last)) : json(nullptr)}});
        }
        return json{{"entries", std::move(entries)}};
    });

    bus.register_handler(queues::kSchedQueues, [this](const json&) {
        json out = to_json(scheduler_->queues());
        out["busy_workers"] = scheduler_->busy_workers();
        out["clock"] = format_rfc3339(clock_.now());
        return out;
    });

    bus.register_handler(queues::kSchedRunNow, [this](const json& j) {
        const TaskKind task = task_kind_from_string(str(j, "task"));
        const auto subject = opt_id(j, "subject");
        if (!subject) fail(ErrorCode::InvalidArgument, "missing 'subject'");
        if (task == TaskKind::Train) models_->model(ModelId{*subject});
        else models_->version(VersionId{*subject});
        scheduler_->enqueue_now(task, *subject);
        return to_json(scheduler_->queues());
    });

    bus.register_handler(queues::kJobsRecent, [this](const json&) {
        json jobs = json::array();
        for (const auto& r : scheduler_->recent_jobs()) {
            json j = r.result ? to_json(*r.result) : json{{"status", "RUNNING"}};
            j["job"] = to_json(r.job);
            j["dispatched_at"] = format_rfc3339(r.dispatched_at);
            jobs.push_back(std::move(j));
        }
        return json{{"jobs", std::move(jobs)}};
    });
}

} // namespace castorette
