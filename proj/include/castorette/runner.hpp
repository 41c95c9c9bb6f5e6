#pragma once

#include "castorette/bus.hpp"
#include "castorette/pipeline.hpp"
#include "castorette/scheduler.hpp"
#include "castorette/timeseries_store.hpp"
#include "castorette/transform.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <string>
#include <vector>

namespace castorette {

// Bus payloads the runner relies on. Timestamps are RFC 3339 strings.
//   ts.query          {entity, signal, from, to, kind?, producer?} -> {points:[{ts,value}]}
//   ts.ingest         {requests:[{entity, signal, kind, producer?, anchor?, points}]}
//                     -> {counts:[n...], layers:[id...]}, all or nothing
//   model.get         {model} -> model, or {version} -> version with params
//   model.put_version {model, params, score_schedule, metrics, anchor, retire_previous}
//                     -> {version, created}
//   job.completed / job.failed (published) {job, status, produced, duration, error_log}

nlohmann::json points_json(const std::vector<SeriesPoint>& points);
std::vector<SeriesPoint> points_from_json(const nlohmann::json& j);

struct RunnerOptions {
    std::chrono::milliseconds timeout{std::chrono::seconds(60)};
    transform::HolidayCalendar holidays;
};

/// Interprets a model's pipeline for one dispatched job: load the window,
/// clean, engineer features, then fit and store a version (TRAIN) or score
/// and store a forecast with its sigma sibling (SCORE). All data moves over
/// the bus; results are committed in one write, or not at all.
class Runner {
public:
    explicit Runner(Bus& bus, RunnerOptions options = {});

    /// Never throws; failures come back as FAILED with a log.
    JobResult execute(const JobRequest& job);

    Executor executor() {
        return [this](const JobRequest& job) { return execute(job); };
    }

private:
    struct Loaded {
        FeatureFrame frame;
        std::vector<std::string> log;
    };

    Loaded load_frame(const PipelineSpec& spec, Timestamp from, Timestamp to, bool with_target);
    std::vector<SeriesPoint> fetch(const ContextRef& ref, Timestamp from, Timestamp to);
    std::int64_t train(const JobRequest& job, std::vector<std::string>& log);
    std::int64_t score(const JobRequest& job, std::vector<std::string>& log);

    Bus& bus_;
    RunnerOptions options_;
};

} // namespace castorette
