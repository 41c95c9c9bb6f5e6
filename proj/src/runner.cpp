#include "castorette/runner.hpp"

#include "castorette/error.hpp"
#include "castorette/gam/gam2.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

namespace castorette {

using nlohmann::json;

json points_json(const std::vector<SeriesPoint>& points) {
    json a = json::array();
    for (const auto& p : points) a.push_back({{"ts", format_rfc3339(p.ts)}, {"value", p.value}});
    return a;
}

std::vector<SeriesPoint> points_from_json(const json& j) {
    std::vector<SeriesPoint> out;
    out.reserve(j.size());
    for (const auto& p : j) out.push_back({parse_rfc3339(p.at("ts").get<std::string>()), p.at("value").get<double>()});
    return out;
}

namespace {

std::string window_text(const ContextRef& ref, Timestamp from, Timestamp to) {
    return ref.entity + "/" + ref.signal + " in [" + format_rfc3339(from) + ", " + format_rfc3339(to) + ")";
}

Timestamp floor_hour(Timestamp t) { return from_epoch(epoch_seconds(t) - ((epoch_seconds(t) % 3600) + 3600) % 3600); }

MaskedSeries on_grid(const std::vector<SeriesPoint>& points, Timestamp start, std::size_t n) {
    MaskedSeries s(std::vector<double>(n, 0.0));
    std::fill(s.missing.begin(), s.missing.end(), 1);
    for (const auto& p : points) {
        const auto offset = epoch_seconds(p.ts) - epoch_seconds(start);
        if (offset < 0 || offset % 3600 != 0) continue;
        const auto i = static_cast<std::size_t>(offset / 3600);
        if (i >= n) continue;
        s.values[i] = p.value;
        s.missing[i] = 0;
    }
    return s;
}

} // namespace

Runner::Runner(Bus& bus, RunnerOptions options) : bus_(bus), options_(std::move(options)) {}

std::vector<SeriesPoint> Runner::fetch(const ContextRef& ref, Timestamp from, Timestamp to) {
    const json reply = bus_.request(queues::kTsQuery,
                                    {{"entity", ref.entity},
                                     {"signal", ref.signal},
                                     {"from", format_rfc3339(from)},
                                     {"to", format_rfc3339(to)},
                                     {"kind", "observed"}},
                                    options_.timeout);
    return points_from_json(reply.at("points"));
}

Runner::Loaded Runner::load_frame(const PipelineSpec& spec, Timestamp from, Timestamp to, bool with_target) {
    Loaded out;
    // Daily statistics need whole UTC days; lags need target history.
    const Timestamp day_from = day_start(from);
    const Timestamp day_to = day_start(to - Duration{1}) + kDay;
    const Timestamp grid_from = floor_hour(std::min(day_from, from - spec.lag_history()));
    const Timestamp grid_to = std::max(day_to, to);
    const auto n = static_cast<std::size_t>((grid_to - grid_from) / kHour);

    transform::RawInputs inputs;
    inputs.timestamps.resize(n);
    for (std::size_t i = 0; i < n; ++i) inputs.timestamps[i] = grid_from + kHour * static_cast<long>(i);
    for (const auto& [column, ref] : spec.load.covariates) {
        inputs.covariates[column] = on_grid(fetch(ref, grid_from, grid_to), grid_from, n);
    }
    // Scoring must not see observations inside its own horizon.
    const Timestamp target_to = with_target ? to : from;
    const auto target = fetch(spec.load.target, grid_from, target_to);
    inputs.target = on_grid(target, grid_from, n);

    if (with_target) {
        std::size_t in_window = 0;
        for (const auto& p : target) in_window += p.ts >= from && p.ts < to;
        if (in_window == 0) fail(ErrorCode::InsufficientData, "no observations of " + window_text(spec.load.target, from, to));
    }

    transform::StepLog steps;
    transform::apply_cleaning(inputs, spec.transform, &steps);
    out.log = std::move(steps.lines);

    const auto columns = spec.feature_columns();
    FeatureFrame full = transform::engineer_features(inputs, columns, options_.holidays);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < full.rows(); ++i) {
        if (full.timestamps[i] >= from && full.timestamps[i] < to) keep.push_back(i);
    }
    out.frame = full.select_rows(keep);
    if (!with_target) out.frame.target.reset();
    return out;
}

std::int64_t Runner::train(const JobRequest& job, std::vector<std::string>& log) {
    const json model = bus_.request(queues::kModelGet, {{"model", job.subject}}, options_.timeout);
    const PipelineSpec spec = pipeline_from_json(model.at("pipeline"));
    const auto [from, to] = window_for(TaskKind::Train, job.due, spec);
    auto loaded = load_frame(spec, from, to, true);
    log.insert(log.end(), loaded.log.begin(), loaded.log.end());

    const gam::Gam2Artifact artifact = gam::fit_gam2(loaded.frame, spec.train);
    log.push_back("fitted on " + std::to_string(artifact.metrics.n) + " rows, rmse " + std::to_string(artifact.metrics.rmse));

    DeploymentConfig schedule;
    schedule.task = TaskKind::Score;
    schedule.time = job.due + spec.score.delay;
    schedule.repeat = spec.score.repeat;
    const json reply = bus_.request(queues::kModelPutVersion,
                                    {{"model", job.subject},
                                     {"params", gam::serialize(artifact)},
                                     {"score_schedule", to_json(schedule)},
                                     {"metrics",
                                      {{"train_rmse", artifact.metrics.rmse},
                                       {"train_mae", artifact.metrics.mae},
                                       {"train_rows", static_cast<double>(artifact.metrics.n)}}},
                                     {"anchor", format_rfc3339(job.due)},
                                     {"retire_previous", spec.score.retire_previous}},
                                    options_.timeout);
    if (!reply.at("created").get<bool>()) log.push_back("version for this due time already existed");
    return reply.at("version").get<std::int64_t>();
}

std::int64_t Runner::score(const JobRequest& job, std::vector<std::string>& log) {
    const json version = bus_.request(queues::kModelGet, {{"version", job.subject}}, options_.timeout);
    const json model = bus_.request(queues::kModelGet, {{"model", version.at("model")}}, options_.timeout);
    const PipelineSpec spec = pipeline_from_json(model.at("pipeline"));
    const gam::Gam2Artifact artifact = gam::deserialize_artifact(version.at("params").get<std::string>());
    const auto [from, to] = window_for(TaskKind::Score, job.due, spec);
    auto loaded = load_frame(spec, from, to, false);
    log.insert(log.end(), loaded.log.begin(), loaded.log.end());

    const gam::ForecastOutput fc = gam::score(artifact, loaded.frame, spec.load.score_horizon);
    std::vector<SeriesPoint> mu, sigma;
    std::size_t clamped = 0;
    for (std::size_t i = 0; i < fc.timestamps.size(); ++i) {
        mu.push_back({fc.timestamps[i], fc.mu[i]});
        sigma.push_back({fc.timestamps[i], fc.sigma[i]});
        clamped += fc.clamped[i];
    }
    if (clamped > 0) log.push_back(std::to_string(clamped) + " rows clamped to the training domain");

    const auto& target = spec.load.target;
    auto request = [&](const std::string& signal, const std::vector<SeriesPoint>& pts) {
        return json{{"entity", target.entity},
                    {"signal", signal},
                    {"kind", "forecast"},
                    {"producer", job.subject},
                    {"anchor", format_rfc3339(job.due)},
                    {"points", points_json(pts)}};
    };
    const json reply = bus_.request(
        queues::kTsIngest, {{"requests", json::array({request(target.signal, mu), request(sigma_signal_name(target.signal), sigma)})}},
        options_.timeout);
    return reply.at("layers").at(0).get<std::int64_t>();
}

JobResult Runner::execute(const JobRequest& job) {
    const auto start = std::chrono::steady_clock::now();
    JobResult result;
    std::vector<std::string> log;
    try {
        result.produced = job.task == TaskKind::Train ? train(job, log) : score(job, log);
        result.status = JobStatus::Ok;
    } catch (const std::exception& e) {
        result.status = JobStatus::Failed;
        std::string text = e.what();
        for (const auto& line : log) text += "\n" + line;
        result.error_log = std::move(text);
    }
    result.duration = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    json payload = to_json(result);
    payload["job"] = to_json(job);
    if (result.status == JobStatus::Ok && !log.empty()) payload["log"] = log;
    try {
        bus_.publish(result.status == JobStatus::Ok ? queues::kJobCompleted : queues::kJobFailed, payload);
    } catch (const std::exception& e) {
        spdlog::warn("runner: could not publish job result: {}", e.what());
    }
    if (result.status == JobStatus::Failed) {
        spdlog::warn("runner: {} {} due {} failed: {}", to_string(job.task), job.subject, format_rfc3339(job.due),
                     *result.error_log);
    }
    return result;
}

} // namespace castorette
