// castorette: command-line front end for the platform.
//
// Exit codes: 0 success, 1 runtime or store error, 2 bad arguments.

#include "castorette/error.hpp"
#include "castorette/service.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

using namespace castorette;
using nlohmann::json;

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

void wait_for_signal() {
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

struct Global {
    std::string config;
    std::string data_dir;
    std::optional<std::size_t> workers;
    bool json_out = false;
    bool verbose = false;

    ServiceConfig load() const {
        ServiceConfig c = config.empty() ? ServiceConfig{} : ServiceConfig::load(config);
        if (!data_dir.empty()) c.data_dir = data_dir;
        if (c.data_dir.empty()) c.data_dir = "castorette-data";
        if (workers) c.workers = *workers;
        return c;
    }
};

void print_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
        width[c] = header[c].size();
        for (const auto& r : rows) width[c] = std::max(width[c], r[c].size());
    }
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t c = 0; c < cells.size(); ++c) {
            std::cout << cells[c];
            if (c + 1 < cells.size()) std::cout << std::string(width[c] - cells[c].size() + 2, ' ');
        }
        std::cout << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
}

std::string num(const json& v) {
    if (v.is_null()) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v.get<double>());
    return buf;
}

std::string text(const json& v) {
    if (v.is_null()) return "-";
    return v.is_string() ? v.get<std::string>() : v.dump();
}

int cmd_ingest(const Global& g, const std::string& path, bool strict) {
    Platform p(g.load());
    const CsvReport report = p.ingest_csv(std::filesystem::path(path), strict ? std::optional<bool>(true) : std::nullopt);
    if (g.json_out) {
        std::cout << to_json(report).dump(2) << '\n';
    } else {
        std::cout << report.stored << " of " << report.rows << " rows stored\n";
        for (const auto& e : report.errors) std::cout << "line " << e.line << ": " << e.error << ": " << e.detail << '\n';
    }
    return 0;
}

int cmd_serve(const Global& g, const std::string& host, std::optional<int> port, const std::string& poll,
              const std::string& update, bool no_scheduler) {
    ServiceConfig cfg = g.load();
    if (port) cfg.port = *port;
    Platform p(cfg);
    HttpServer server(p);
    const int bound = server.start(host, cfg.port);
    std::cout << "serving on " << host << ':' << bound << std::endl;
    std::thread sched;
    if (!no_scheduler) sched = std::thread([&] { p.scheduler().run_forever(parse_human_duration(poll), parse_human_duration(update)); });
    wait_for_signal();
    server.stop();
    p.scheduler().stop();
    if (sched.joinable()) sched.join();
    return 0;
}

int cmd_sched_run(const Global& g, const std::string& poll, const std::string& update) {
    Platform p(g.load());
    p.scheduler().on_job_finished([](const JobRequest& job, const JobResult& r) {
        std::cout << to_string(job.task) << ' ' << job.subject << " due " << format_rfc3339(job.due) << ": "
                  << (r.status == JobStatus::Ok ? "OK" : "FAILED") << std::endl;
    });
    std::thread loop([&] { p.scheduler().run_forever(parse_human_duration(poll), parse_human_duration(update)); });
    wait_for_signal();
    p.scheduler().stop();
    loop.join();
    return 0;
}

int cmd_sched_queues(const Global& g) {
    Platform p(g.load());
    p.scheduler().init_action();
    const json q = p.bus().request(queues::kSchedQueues, json::object());
    if (g.json_out) {
        std::cout << q.dump(2) << '\n';
        return 0;
    }
    std::vector<std::vector<std::string>> rows;
    for (const char* name : {"train_now", "score_now", "train_later", "score_later"}) {
        for (const auto& t : q.at(name)) rows.push_back({name, text(t.at("subject")), text(t.at("due"))});
    }
    print_table({"queue", "subject", "due"}, rows);
    return 0;
}

int cmd_model_put(const Global& g, const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Io, "cannot open " + path);
    json body;
    try {
        in >> body;
    } catch (const json::exception& e) {
        fail(ErrorCode::InvalidArgument, path + ": " + e.what());
    }
    Platform p(g.load());
    const json check = p.bus().request(queues::kModelValidate, body);
    if (!check.at("diagnostics").empty()) {
        for (const auto& d : check.at("diagnostics")) std::cerr << d.at("step").get<std::string>() << ": " << d.at("message").get<std::string>() << '\n';
        fail(ErrorCode::ValidationError, "pipeline is invalid");
    }
    const json model = p.bus().request(queues::kModelPut, body);
    if (g.json_out) std::cout << model.dump(2) << '\n';
    else std::cout << "stored model " << model.at("id") << " (" << model.at("name").get<std::string>() << ")\n";
    return 0;
}

int cmd_model_list(const Global& g, const std::string& entity, const std::string& signal, bool related) {
    Platform p(g.load());
    json req{{"include_related", related}};
    if (!entity.empty()) req["entity"] = entity;
    if (!signal.empty()) req["signal"] = signal;
    const json reply = p.bus().request(queues::kModelList, req);
    if (g.json_out) {
        std::cout << reply.dump(2) << '\n';
        return 0;
    }
    std::vector<std::vector<std::string>> rows;
    for (const auto& m : reply.at("models")) {
        const auto& t = m.at("target");
        rows.push_back({text(m.at("id")), text(m.at("name")), text(t.at("entity")) + "/" + text(t.at("signal")),
                        text(m.at("active_version"))});
    }
    print_table({"id", "name", "target", "active"}, rows);
    return 0;
}

int cmd_forecast_show(const Global& g, const std::string& entity, const std::string& signal, std::string from,
                      std::string to, const std::string& version) {
    Platform p(g.load());
    if (from.empty()) from = format_rfc3339(day_start(std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now())));
    if (to.empty()) to = format_rfc3339(parse_rfc3339(from) + kDay);
    json req{{"entity", entity}, {"signal", signal}, {"from", from}, {"to", to}};
    if (!version.empty()) req["version"] = version;
    const json reply = p.bus().request(queues::kTsCompare, req);
    if (g.json_out) {
        std::cout << reply.dump(2) << '\n';
        return 0;
    }
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : reply.at("rows")) {
        rows.push_back({text(r.at("ts")), num(r.at("observed")), num(r.at("forecast")), num(r.at("lower")),
                        num(r.at("upper")), text(r.at("version"))});
    }
    print_table({"ts", "observed", "forecast", "lower", "upper", "version"}, rows);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"castorette: context-aware forecasting platform"};
    app.require_subcommand(1);
    // Global options may follow the verb.
    app.fallthrough();
    Global g;
    app.add_option("-c,--config", g.config, "JSON config file");
    app.add_option("-d,--data-dir", g.data_dir, "Data directory (overrides config)");
    app.add_option("-w,--workers", g.workers, "Worker pool size (overrides config)");
    app.add_flag("--json", g.json_out, "JSON output");
    app.add_flag("-v,--verbose", g.verbose, "Debug logging");

    std::function<int()> run;

    auto* ingest = app.add_subcommand("ingest", "Ingest a ts,entity,signal,value CSV");
    std::string csv_path;
    bool strict = false;
    ingest->add_option("csv", csv_path, "CSV file")->required();
    ingest->add_flag("--strict", strict, "Reject rows for unknown entities or signals");
    ingest->callback([&] { run = [&] { return cmd_ingest(g, csv_path, strict); }; });

    auto* serve = app.add_subcommand("serve", "Serve the HTTP API and run the scheduler");
    std::optional<int> port;
    std::string host = "0.0.0.0", poll = "10s", update = "60s";
    bool no_scheduler = false;
    serve->add_option("-p,--port", port, "Port (overrides config)")->check(CLI::Range(0, 65535));
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--poll", poll, "Poll interval");
    serve->add_option("--update", update, "Update interval");
    serve->add_flag("--no-scheduler", no_scheduler, "HTTP only");
    serve->callback([&] { run = [&] { return cmd_serve(g, host, port, poll, update, no_scheduler); }; });

    auto* sched = app.add_subcommand("sched", "Scheduler");
    sched->require_subcommand(1)->fallthrough();
    auto* sched_run = sched->add_subcommand("run", "Run the poll/update loop until interrupted");
    sched_run->add_option("--poll", poll, "Poll interval");
    sched_run->add_option("--update", update, "Update interval");
    sched_run->callback([&] { run = [&] { return cmd_sched_run(g, poll, update); }; });
    auto* sched_queues = sched->add_subcommand("queues", "Show the task queues after an init");
    sched_queues->callback([&] { run = [&] { return cmd_sched_queues(g); }; });

    auto* model = app.add_subcommand("model", "Models");
    model->require_subcommand(1)->fallthrough();
    auto* model_put = model->add_subcommand("put", "Store a model from a JSON file");
    std::string model_path;
    model_put->add_option("json", model_path, "Model JSON")->required();
    model_put->callback([&] { run = [&] { return cmd_model_put(g, model_path); }; });
    auto* model_list = model->add_subcommand("list", "List models");
    std::string entity, signal;
    bool related = false;
    model_list->add_option("--entity", entity, "Entity name");
    model_list->add_option("--signal", signal, "Signal name");
    model_list->add_flag("--related", related, "Include related entities");
    model_list->callback([&] { run = [&] { return cmd_model_list(g, entity, signal, related); }; });

    auto* forecast = app.add_subcommand("forecast", "Forecasts");
    forecast->require_subcommand(1)->fallthrough();
    auto* show = forecast->add_subcommand("show", "Forecast against observations");
    std::string from, to, version;
    show->add_option("entity", entity, "Entity name")->required();
    show->add_option("signal", signal, "Signal name")->required();
    show->add_option("--from", from, "Start (RFC 3339), default today 00:00Z");
    show->add_option("--to", to, "End (RFC 3339), default start + 1 day");
    show->add_option("--version", version, "Model version id, default active or latest");
    show->callback([&] { run = [&] { return cmd_forecast_show(g, entity, signal, from, to, version); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    spdlog::set_level(g.verbose ? spdlog::level::debug : spdlog::level::warn);
    try {
        return run ? run() : 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
