// Acceptance suite: one PASS/FAIL line per primary criterion. Exit status is
// the number of failures.

#include "castorette/error.hpp"
#include "castorette/gam/additive.hpp"
#include "castorette/gam/gam2.hpp"
#include "castorette/service.hpp"
#include "castorette/transform.hpp"

#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "support/schedule.hpp"
#include "support/synthetic.hpp"

#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>

using namespace castorette;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using steady = std::chrono::steady_clock;

double seconds_since(steady::time_point t0) { return std::chrono::duration<double>(steady::now() - t0).count(); }

std::string fmt(double v, int digits = 3) {
    std::ostringstream o;
    o.precision(digits);
    o << v;
    return o.str();
}

Timestamp at(const char* text) { return parse_rfc3339(text); }

// ---- scheduler replay ---------------------------------------------------------

Outcome scheduler_replay() {
    const auto t0 = steady::now();
    auto cfg = [](TaskKind task, const char* time, Duration repeat) {
        DeploymentConfig c;
        c.task = task;
        c.time = at(time);
        c.repeat = repeat;
        return c;
    };
    // M1 trains hourly; MV1.1 and MV1.2 each score once.
    const std::vector<ScheduleEntry> entries{
        {TaskKind::Train, 1, cfg(TaskKind::Train, "2018-07-12T09:00:00Z", kHour), std::nullopt},
        {TaskKind::Score, 11, cfg(TaskKind::Score, "2018-07-12T10:00:00Z", Duration{0}), std::nullopt},
        {TaskKind::Score, 12, cfg(TaskKind::Score, "2018-07-12T09:00:00Z", Duration{0}), std::nullopt}};
    std::mutex mu;
    std::vector<JobRequest> executed;
    Clock clock = Clock::virtual_at(at("2018-07-12T09:05:00Z"));
    Scheduler sched([&] { return entries; },
                    [&](const JobRequest& j) {
                        std::lock_guard lock(mu);
                        executed.push_back(j);
                        return JobResult{JobStatus::Ok, 1, std::nullopt, 0.0};
                    },
                    clock);
    std::vector<std::string> problems;
    auto expect = [&](bool ok, const std::string& what) {
        if (!ok) problems.push_back(what);
    };
    auto only = [](const std::deque<Task>& q, std::int64_t subject, const char* due) {
        return q.size() == 1 && q.front().subject == subject && q.front().due == at(due);
    };

    const QueueState init = sched.init_action();
    expect(only(init.train_now, 1, "2018-07-12T09:00:00Z"), "init: train_now != {M1@09:00}");
    expect(only(init.score_now, 12, "2018-07-12T09:00:00Z"), "init: score_now != {MV1.2@09:00}");
    expect(only(init.score_later, 11, "2018-07-12T10:00:00Z"), "init: score_later != {MV1.1@10:00}");
    expect(!init.train_later.empty() && init.train_later.front().due == at("2018-07-12T10:00:00Z"),
           "init: train_later does not start at M1@10:00");

    clock.advance_to(at("2018-07-12T09:10:00Z"));
    const auto jobs = sched.poll_action();
    sched.wait_idle();
    expect(jobs.size() == 2 && jobs[0].task == TaskKind::Train && jobs[0].subject == 1 &&
               jobs[0].due == at("2018-07-12T09:00:00Z") && jobs[1].task == TaskKind::Score && jobs[1].subject == 12 &&
               jobs[1].due == at("2018-07-12T09:00:00Z"),
           "poll: dispatched jobs != [M1 train, MV1.2 score]");
    expect(sched.queues().train_now.empty() && sched.queues().score_now.empty(), "poll: now queues not drained");

    clock.advance_to(at("2018-07-12T10:10:00Z"));
    const auto moved = sched.update_action();
    const QueueState after = sched.queues();
    expect(moved == 2, "update: moved " + std::to_string(moved) + " != 2");
    expect(only(after.train_now, 1, "2018-07-12T10:00:00Z"), "update: train_now != {M1@10:00}");
    expect(only(after.score_now, 11, "2018-07-12T10:00:00Z"), "update: score_now != {MV1.1@10:00}");
    expect(after.score_later.empty(), "update: score_later not empty");
    expect(executed.size() == 2, "executor saw " + std::to_string(executed.size()) + " jobs");

    const double secs = seconds_since(t0);
    expect(secs < 1.0, "took " + fmt(secs) + " s");
    if (!problems.empty()) return {false, problems.front()};
    return {true, "init now={M1,MV1.2}, poll dispatched 2, update moved 2, " + fmt(secs) + " s"};
}

// ---- throughput ---------------------------------------------------------------

Outcome throughput() {
    const auto t0 = steady::now();
    const double window = 3.6;
    struct Case {
        std::size_t workers;
        int job_ms;
        double expected;
    };
    const Case cases[] = {{25, 180, 500}, {25, 60, 1500}, {50, 180, 1000}, {50, 60, 3000}};
    bool ok = true;
    std::string detail;
    for (const auto& c : cases) {
        std::vector<ScheduleEntry> entries;
        const auto n = static_cast<std::int64_t>(c.expected * 1.5);
        for (std::int64_t i = 0; i < n; ++i) {
            DeploymentConfig cfg;
            cfg.task = TaskKind::Score;
            cfg.time = at("2018-07-12T09:00:00Z");
            entries.push_back({TaskKind::Score, i + 1, cfg, std::nullopt});
        }
        Clock clock = Clock::wall();
        SchedulerOptions opts;
        opts.workers = c.workers;
        opts.recent_jobs = 16;
        Scheduler sched([&] { return entries; },
                        [&](const JobRequest&) {
                            std::this_thread::sleep_for(std::chrono::milliseconds(c.job_ms));
                            return JobResult{JobStatus::Ok, 1, std::nullopt, c.job_ms / 1000.0};
                        },
                        clock, opts);
        std::atomic<std::size_t> in_window{0};
        steady::time_point start;
        sched.on_job_finished([&](const JobRequest&, const JobResult&) {
            if (seconds_since(start) <= window) ++in_window;
        });
        start = steady::now();
        std::thread loop([&] { sched.run_forever(5ms, 1h); });
        std::this_thread::sleep_until(start + std::chrono::duration_cast<steady::duration>(std::chrono::duration<double>(window)));
        sched.stop();
        loop.join();
        const double got = static_cast<double>(in_window.load());
        const double err = std::abs(got - c.expected) / c.expected;
        ok = ok && err <= 0.10;
        detail += "C=" + std::to_string(c.workers) + ",d=" + std::to_string(c.job_ms) + "ms: " + fmt(got, 5) + "/" +
                  fmt(c.expected, 5) + "; ";
    }
    const double secs = seconds_since(t0);
    ok = ok && secs < 30.0;
    return {ok, detail + fmt(secs) + " s"};
}

// ---- PELT ------------------------------------------------------------------------

double pelt_segment_cost(const std::vector<double>& x, std::size_t a, std::size_t b, transform::CostKind kind, double var,
                         double floor) {
    const double n = static_cast<double>(b - a);
    double mean = 0.0;
    for (std::size_t i = a; i < b; ++i) mean += x[i];
    mean /= n;
    double ss = 0.0;
    for (std::size_t i = a; i < b; ++i) ss += (x[i] - mean) * (x[i] - mean);
    if (kind == transform::CostKind::MeanNormal) return ss / var;
    const double v = ss / n;
    const double s2 = std::max(v, floor);
    return n * std::log(2 * std::numbers::pi * s2) + n * v / s2;
}

Outcome pelt_exactness() {
    using transform::CostKind;
    const auto t0 = steady::now();
    std::mt19937_64 rng(2018);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> len(2, 30);
    const double var = 1.3;
    std::size_t checks = 0, failures = 0;
    double worst = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t n = len(rng);
        std::vector<double> x(n);
        double level = 0.0, scale = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (i % 6 == 0) {
                level = 4 * z(rng);
                scale = std::exp(0.7 * z(rng));
            }
            x[i] = level + scale * z(rng);
        }
        const double floor = transform::variance_floor(x);
        const CostKind kinds[] = {CostKind::MeanNormal, CostKind::MeanVarNormal};
        std::vector<oracle::Matrix> tables;
        std::vector<std::size_t> min_len;
        for (const auto kind : kinds) {
            oracle::Matrix t(n + 1, std::vector<double>(n + 1, 0.0));
            for (std::size_t a = 0; a < n; ++a) {
                for (std::size_t b = a + 1; b <= n; ++b) t[a][b] = pelt_segment_cost(x, a, b, kind, var, floor);
            }
            tables.push_back(std::move(t));
            min_len.push_back(kind == CostKind::MeanNormal ? 1 : 2);
        }
        const auto best = oracle::exhaustive_by_cuts(n, tables, min_len);
        for (std::size_t c = 0; c < 2; ++c) {
            for (const double pen : {0.5, 2 * std::log(static_cast<double>(n)), 10.0}) {
                double optimum = std::numeric_limits<double>::infinity();
                for (std::size_t k = 0; k < n; ++k) optimum = std::min(optimum, best[c][k] + pen * static_cast<double>(k));
                transform::PeltOptions opt;
                opt.cost = kinds[c];
                opt.variance = var;
                const auto seg = transform::pelt(x, pen, opt);
                const double rel = std::abs(seg.cost - optimum) / std::max(1.0, std::abs(optimum));
                worst = std::max(worst, rel);
                ++checks;
                if (rel > 1e-9) ++failures;
            }
        }
    }
    const double secs = seconds_since(t0);
    return {failures == 0 && secs < 60.0, std::to_string(checks - failures) + "/" + std::to_string(checks) +
                                              " optimal, worst relative gap " + fmt(worst) + ", " + fmt(secs) + " s"};
}

// ---- penalized fit -----------------------------------------------------------------

double max_coefficient_gap(const gam::AdditiveModel& m, const std::vector<double>& ref) {
    double worst = std::abs(ref[0] - m.intercept);
    std::size_t off = 1;
    for (const auto& t : m.terms) {
        for (Eigen::Index k = 0; k < t.coefficients.size(); ++k) {
            worst = std::max(worst, std::abs(ref[off + static_cast<std::size_t>(k)] - t.coefficients(k)));
        }
        off += static_cast<std::size_t>(t.coefficients.size());
    }
    return worst;
}

/// Central-difference gradient of the penalized objective along the intercept
/// and every direction that keeps each term centered.
double finite_difference_gradient(const gam::AdditiveModel& m, const FeatureFrame& frame, const std::vector<double>& y) {
    const double h = 1e-5;
    auto objective = [&](const gam::AdditiveModel& mm) { return gam::penalized_objective(mm, frame, y); };
    double worst = 0.0;
    {
        auto up = m, down = m;
        up.intercept += h;
        down.intercept -= h;
        worst = std::abs(objective(up) - objective(down)) / (2 * h);
    }
    for (std::size_t j = 0; j < m.terms.size(); ++j) {
        const gam::CenteredTerm ct = gam::center_term(m.terms[j].spec, frame);
        for (Eigen::Index k = 0; k < ct.z.cols(); ++k) {
            const Eigen::VectorXd dir = ct.z.col(k).normalized();
            auto up = m, down = m;
            up.terms[j].coefficients += h * dir;
            down.terms[j].coefficients -= h * dir;
            worst = std::max(worst, std::abs(objective(up) - objective(down)) / (2 * h));
        }
    }
    return worst;
}

Outcome penalized_fit_oracle() {
    using namespace castorette::gam;
    std::mt19937_64 rng(77);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst_solve = 0.0, worst_grad_id = 0.0, worst_grad_log = 0.0;
    std::size_t fits = 0;
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = 80 + rep * 7;
        const std::size_t k1 = 4 + rep % 5, k2 = 3 + rep % 4, levels = 2 + rep % 4;
        const auto x1 = fixtures::uniform(n, rng, -2.0, 3.0);
        const auto x2 = fixtures::uniform(n, rng);
        std::vector<int> codes(n);
        std::vector<double> y(n), r(n);
        const double a = 2 * u(rng) - 1, b = 3 * u(rng);
        for (std::size_t i = 0; i < n; ++i) {
            codes[i] = static_cast<int>(i % levels);
            y[i] = a * std::sin(2 * x1[i]) + b * x2[i] * x2[i] + 0.3 * codes[i] + 0.4 * z(rng);
            const double s = std::exp(0.5 * x2[i] + 0.2 * std::cos(x1[i]));
            r[i] = std::pow(s * z(rng), 2) + 1e-12;
        }
        std::vector<std::string> names;
        for (std::size_t l = 0; l < levels; ++l) names.push_back("l" + std::to_string(l));
        auto frame = fixtures::frame_with({real_column("x1", x1), real_column("x2", x2), categorical_column("g", names, codes)}, y);
        const double l1 = std::exp(4 * u(rng) - 3), l2 = std::exp(4 * u(rng) - 3), l3 = std::exp(4 * u(rng) - 3);
        const std::vector<TermSpec> terms{spline_term("x1", k1), spline_term("x2", k2), categorical_term("g")};
        FitOptions opt;
        opt.lambdas = std::vector<double>{l1, l2, l3};
        const auto m = fit_additive(frame, y, terms, opt);
        const auto ref = oracle::penalized_least_squares(
            {fixtures::spline_oracle(x1, k1, l1), fixtures::spline_oracle(x2, k2, l2), fixtures::factor_oracle(codes, levels, l3)}, y);
        worst_solve = std::max(worst_solve, max_coefficient_gap(m, ref));
        worst_grad_id = std::max(worst_grad_id, finite_difference_gradient(m, frame, y));

        FitOptions log_opt = opt;
        log_opt.link = Link::Log;
        const auto ml = fit_additive(frame, r, terms, log_opt);
        worst_grad_log = std::max(worst_grad_log, finite_difference_gradient(ml, frame, r));
        ++fits;
    }
    const bool ok = worst_solve < 1e-8 && worst_grad_id < 1e-6 && worst_grad_log < 1e-6;
    return {ok, std::to_string(fits) + " fixtures: max |beta - dense| " + fmt(worst_solve) + ", max |grad| identity " +
                    fmt(worst_grad_id) + ", log " + fmt(worst_grad_log)};
}

// ---- GAM² statistics -------------------------------------------------------------------

Outcome gam2_statistics() {
    using namespace castorette::gam;
    const auto t0 = steady::now();
    constexpr double pi = std::numbers::pi;
    const std::size_t n = 5000;
    Gam2Config cfg;
    cfg.mean_terms = {spline_term("x")};
    cfg.variance_terms = {spline_term("x")};
    auto draw = [&](std::mt19937_64& rng, auto sigma_of) {
        std::normal_distribution<double> z(0.0, 1.0);
        auto x = fixtures::uniform(n, rng);
        std::vector<double> y(n), s(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = sigma_of(x[i]);
            y[i] = std::sin(2 * pi * x[i]) + 2 * x[i] + s[i] * z(rng);
        }
        return std::tuple{fixtures::frame_with({real_column("x", x)}, y), y, s};
    };
    std::mt19937_64 rng(31);

    // Constant sigma = 2.
    auto [homo_train, hy, hs] = draw(rng, [](double) { return 2.0; });
    const auto homo = fit_gam2(homo_train, cfg);
    auto [homo_test, hty, hts] = draw(rng, [](double) { return 2.0; });
    const auto hf = score(homo, homo_test);
    double mean_sigma = 0.0;
    for (const double s : hf.sigma) mean_sigma += s / static_cast<double>(n);

    // sigma(x) = 1 + x.
    auto [het_train, ey, es] = draw(rng, [](double x) { return 1.0 + x; });
    const auto het = fit_gam2(het_train, cfg);
    auto [het_test, ty, ts] = draw(rng, [](double x) { return 1.0 + x; });
    const auto f = score(het, het_test);
    const double rho = oracle::spearman(f.sigma, ts);
    std::size_t covered = 0;
    for (std::size_t i = 0; i < n; ++i) covered += std::abs(ty[i] - f.mu[i]) <= kBandZ * f.sigma[i];
    const double coverage = static_cast<double>(covered) / static_cast<double>(n);

    const double secs = seconds_since(t0);
    const bool ok = mean_sigma >= 1.8 && mean_sigma <= 2.2 && rho > 0.8 && coverage >= 0.93 && coverage <= 0.97 && secs < 120;
    return {ok, "mean sigma " + fmt(mean_sigma, 4) + " (target 2), Spearman " + fmt(rho, 4) + ", coverage " +
                    fmt(100 * coverage, 4) + "%, " + fmt(secs) + " s"};
}

// ---- end to end -------------------------------------------------------------------------

Outcome end_to_end() {
    const auto t0 = steady::now();
    const auto dir = fixtures::scratch_dir("acceptance-e2e");
    const Timestamp start = at("2018-04-01T00:00:00Z");
    const Timestamp first = start + kDay * 60;
    const int days = 7;
    synthetic::write_csv(synthetic::make_site(90), dir / "site.csv");

    ServiceConfig cfg;
    cfg.data_dir = dir / "data";
    Platform p(cfg, Clock::virtual_at(first));
    const CsvReport report = p.ingest_csv(dir / "site.csv");
    if (!report.errors.empty() || report.stored != 90 * 24 * 4) return {false, "ingest stored " + std::to_string(report.stored)};
    const auto model =
        p.bus().request(queues::kModelPut, json::parse(synthetic::model_json("load", format_rfc3339(first)))).at("id").get<std::int64_t>();

    Scheduler& sched = p.scheduler();
    auto cycle = [&] {
        sched.poll_action();
        sched.wait_idle();
    };
    for (int d = 0; d < days; ++d) {
        p.clock().advance_to(first + kDay * d);
        if (d == 0) sched.init_action();
        else sched.update_action();
        cycle();
        // The version trained above brings a score schedule due now.
        sched.update_action();
        cycle();
    }

    const ContextKey key = p.context().resolve_context("sub_A", "energy");
    std::vector<std::string> problems;
    double se = 0.0, se_persist = 0.0;
    std::size_t points = 0;
    for (int d = 0; d < days; ++d) {
        const Timestamp day0 = first + kDay * d;
        std::optional<VersionId> version;
        for (const auto& v : p.models().versions(ModelId{model})) {
            if (v.anchor == day0) version = v.id;
        }
        if (!version) {
            problems.push_back("no version trained for " + format_rfc3339(day0));
            continue;
        }
        const auto layer = p.series().select_layer(key, SeriesKind::Forecast, version);
        if (!layer) {
            problems.push_back("no forecast layer for version " + std::to_string(version->value));
            continue;
        }
        const auto rows = p.series().forecast_vs_observed(key, day0, day0 + kDay, version);
        const auto previous = p.series().query({key, day0 - kDay, day0});
        if (rows.size() != 24 || previous.size() != 24) {
            problems.push_back("incomplete rows for " + format_rfc3339(day0));
            continue;
        }
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& r = rows[i];
            if (!r.forecast || !r.observed) {
                std::string anchors;
                for (const auto& l : p.series().forecast_layers_of(*version)) anchors += " " + format_rfc3339(*l.anchor);
                problems.push_back("missing forecast or observation at " + format_rfc3339(r.ts) + "; layers" + anchors);
            }
            if (!r.sigma) problems.push_back("missing sigma sibling value");
            if (r.producer != version) problems.push_back("point without its producing version");
            if (!r.forecast || !r.observed) continue;
            se += std::pow(*r.forecast - *r.observed, 2);
            se_persist += std::pow(previous[i].value - *r.observed, 2);
            ++points;
        }
    }
    const double rmse = std::sqrt(se / std::max<std::size_t>(points, 1));
    const double rmse_persist = std::sqrt(se_persist / std::max<std::size_t>(points, 1));
    if (rmse >= rmse_persist) problems.push_back("rmse " + fmt(rmse) + " does not beat persistence " + fmt(rmse_persist));
    const double secs = seconds_since(t0);
    if (secs >= 180) problems.push_back("took " + fmt(secs) + " s");
    std::filesystem::remove_all(dir);
    if (!problems.empty()) return {false, problems.front()};
    return {true, std::to_string(days) + " daily train/score cycles, " + std::to_string(points) + " points, RMSE " +
                      fmt(rmse) + " vs persistence " + fmt(rmse_persist) + ", " + fmt(secs) + " s"};
}

// ---- schedule occurrences ---------------------------------------------------------------

Outcome schedule_occurrences() {
    const auto t0 = steady::now();
    std::mt19937_64 rng(1207);
    const std::int64_t repeats[] = {900, 3600, 7200, 86400};
    std::size_t bad[4] = {0, 0, 0, 0};
    const char* names[] = {"one-shot", "repeat", "until", "catch-up"};
    for (int i = 0; i < 1000; ++i) {
        // One-shot: arbitrary action times; exactly one run once due, never before.
        auto one = schedule::random_scenario(rng, 0, i % 2 == 0, 4 * 3600);
        if (schedule::replay(one) != schedule::expected_runs(one.time, 0, one.until, one.actions)) ++bad[0];

        // Repeat: updates at least as frequent as the repeat; every occurrence runs.
        const auto r = repeats[i % 4];
        auto rep = schedule::random_scenario(rng, r, false, r);
        schedule::start_before_first(rep);
        if (schedule::replay(rep) != schedule::enumerate(rep.time, rep.repeat, std::nullopt, rep.actions.back())) ++bad[1];

        // Until: as above, bounded by until.
        auto until = schedule::random_scenario(rng, r, true, r);
        schedule::start_before_first(until);
        if (schedule::replay(until) != schedule::enumerate(until.time, until.repeat, until.until, until.actions.back())) ++bad[2];

        // Catch-up: sparse actions; overdue occurrences collapse to the latest.
        auto late = schedule::random_scenario(rng, r, i % 2 == 0, 8 * 3600);
        if (schedule::replay(late) != schedule::expected_runs(late.time, late.repeat, late.until, late.actions)) ++bad[3];

        // The library's own enumerator agrees with the brute-force one.
        DeploymentConfig cfg{late.task, from_epoch(late.time), Duration{late.repeat}, std::nullopt};
        if (late.until) cfg.until = from_epoch(*late.until);
        std::vector<std::int64_t> got;
        for (const auto t : occurrences(cfg, from_epoch(late.actions.back()))) got.push_back(epoch_seconds(t));
        if (got != schedule::enumerate(late.time, late.repeat, late.until, late.actions.back())) ++bad[3];
    }
    std::string detail;
    bool ok = true;
    for (int c = 0; c < 4; ++c) {
        ok = ok && bad[c] == 0;
        detail += std::string(names[c]) + " " + std::to_string(1000 - bad[c]) + "/1000; ";
    }
    return {ok, detail + fmt(seconds_since(t0)) + " s"};
}

// ---- durability ----------------------------------------------------------------------------

double point_value(int day, int hour) { return day * 100.0 + hour + 0.25; }

/// Writes points, models and versions forever, acknowledging each commit on
/// stdout. Meant to be killed.
int durability_child(const std::filesystem::path& dir) {
    spdlog::set_level(spdlog::level::off);
    ServiceConfig cfg;
    cfg.data_dir = dir;
    Platform p(cfg, Clock::virtual_at(at("2018-07-12T00:00:00Z")));
    p.context().register_entity_type("site");
    p.context().register_signal_type("measurement");
    p.context().upsert_entity("sub_A", "site");
    p.context().upsert_signal("energy", "measurement");

    // A small fitted artifact to store as version parameters.
    std::mt19937_64 rng(3);
    const auto x = fixtures::uniform(200, rng);
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * x[i];
    gam::Gam2Config gc;
    gc.mean_terms = {gam::spline_term("x", 4)};
    gc.variance_terms = {gam::spline_term("x", 4)};
    const std::string params = gam::serialize(gam::fit_gam2(fixtures::frame_with({real_column("x", x)}, y), gc));

    const Timestamp base = at("2018-01-01T00:00:00Z");
    std::int64_t model = 0;
    for (int day = 0;; ++day) {
        json pts = json::array();
        for (int h = 0; h < 24; ++h) {
            pts.push_back({{"ts", format_rfc3339(base + kDay * day + kHour * h)}, {"value", point_value(day, h)}});
        }
        p.bus().request(queues::kTsIngest, {{"requests", json::array({{{"entity", "sub_A"}, {"signal", "energy"}, {"points", pts}}})}});
        std::printf("P %d\n", day);
        if (day % 4 == 0) {
            json m = json::parse(synthetic::model_json("m" + std::to_string(day), "2018-07-12T00:00:00Z"));
            m["pipeline"] = {{"load", {{"covariates", json::object()}}},
                             {"train", {{"mean_terms", {"lag_24"}}, {"variance_terms", {"TimeOfDay"}}}}};
            model = p.bus().request(queues::kModelPut, m).at("id");
            std::printf("M %lld\n", static_cast<long long>(model));
        }
        DeploymentConfig sc;
        sc.task = TaskKind::Score;
        sc.time = base + kDay * day;
        const auto v = p.bus().request(queues::kModelPutVersion, {{"model", model},
                                                                    {"params", params},
                                                                    {"score_schedule", to_json(sc)},
                                                                    {"anchor", format_rfc3339(base + kDay * day)}});
        std::printf("V %lld %lld\n", static_cast<long long>(v.at("version").get<std::int64_t>()), static_cast<long long>(model));
        std::fflush(stdout);
    }
}

Outcome durability(const char* self) {
    const auto t0 = steady::now();
    const auto dir = fixtures::scratch_dir("acceptance-durability");
    std::vector<int> days;
    std::vector<std::int64_t> models;
    std::vector<std::pair<std::int64_t, std::int64_t>> versions;
    std::mt19937_64 rng(std::random_device{}());
    const int kills = 3;
    for (int round = 0; round < kills; ++round) {
        int fds[2];
        if (::pipe(fds) != 0) return {false, "pipe failed"};
        const pid_t pid = ::fork();
        if (pid == 0) {
            ::dup2(fds[1], STDOUT_FILENO);
            ::close(fds[0]);
            ::close(fds[1]);
            ::execl(self, self, "--durability-child", dir.c_str(), static_cast<char*>(nullptr));
            std::_Exit(127);
        }
        ::close(fds[1]);
        FILE* in = ::fdopen(fds[0], "r");
        // Kill at a random point after a random number of acknowledgements.
        const int target = 20 + static_cast<int>(rng() % 60);
        char line[128];
        int acks = 0;
        while (acks < target && std::fgets(line, sizeof line, in)) {
            int d = 0;
            long long a = 0, b = 0;
            if (std::sscanf(line, "P %d", &d) == 1) days.push_back(d);
            else if (std::sscanf(line, "V %lld %lld", &a, &b) == 2) versions.emplace_back(a, b);
            else if (std::sscanf(line, "M %lld", &a) == 1) models.push_back(a);
            ++acks;
        }
        std::this_thread::sleep_for(std::chrono::microseconds(rng() % 3000));
        ::kill(pid, SIGKILL);
        // Anything acknowledged before the kill landed is committed too.
        while (std::fgets(line, sizeof line, in)) {
            int d = 0;
            long long a = 0, b = 0;
            if (std::sscanf(line, "P %d", &d) == 1) days.push_back(d);
            else if (std::sscanf(line, "V %lld %lld", &a, &b) == 2) versions.emplace_back(a, b);
            else if (std::sscanf(line, "M %lld", &a) == 1) models.push_back(a);
        }
        std::fclose(in);
        int status = 0;
        ::waitpid(pid, &status, 0);
        if (!WIFSIGNALED(status)) return {false, "child exited on its own, status " + std::to_string(status)};
    }

    ServiceConfig cfg;
    cfg.data_dir = dir;
    Platform p(cfg, Clock::virtual_at(at("2018-07-12T00:00:00Z")));
    std::size_t lost = 0;
    const ContextKey key = p.context().resolve_context("sub_A", "energy");
    const Timestamp base = at("2018-01-01T00:00:00Z");
    for (const int d : days) {
        const auto pts = p.series().query({key, base + kDay * d, base + kDay * (d + 1)});
        bool ok = pts.size() == 24;
        for (std::size_t h = 0; ok && h < pts.size(); ++h) ok = pts[h].value == point_value(d, static_cast<int>(h));
        lost += !ok;
    }
    for (const auto m : models) {
        try {
            p.models().model(ModelId{m});
        } catch (const Error&) {
            ++lost;
        }
    }
    for (const auto& [v, m] : versions) {
        try {
            lost += p.models().version(VersionId{v}).model != ModelId{m};
        } catch (const Error&) {
            ++lost;
        }
    }
    std::filesystem::remove_all(dir);
    const std::string detail = std::to_string(kills) + " kills; " + std::to_string(days.size()) + " point batches, " +
                               std::to_string(models.size()) + " models, " + std::to_string(versions.size()) +
                               " versions acknowledged; " + std::to_string(lost) + " lost; " + fmt(seconds_since(t0)) + " s";
    return {lost == 0 && !versions.empty(), detail};
}

} // namespace

int main(int argc, char** argv) {
    if (argc == 3 && std::string(argv[1]) == "--durability-child") return durability_child(argv[2]);
    spdlog::set_level(spdlog::level::err);
    std::string only = argc == 2 ? argv[1] : "";

    // Durability forks, so it runs before any other criterion starts threads.
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"durability", [&] { return durability("/proc/self/exe"); }},
        {"scheduler-replay", scheduler_replay},
        {"throughput", throughput},
        {"pelt-exactness", pelt_exactness},
        {"penalized-fit-oracle", penalized_fit_oracle},
        {"gam2-statistics", gam2_statistics},
        {"end-to-end", end_to_end},
        {"schedule-occurrences", schedule_occurrences},
    };
    int failures = 0;
    for (const auto& [name, run] : criteria) {
        if (!only.empty() && only != name) continue;
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    }
    return failures;
}
