#pragma once

#include "castorette/bus.hpp"
#include "castorette/error.hpp"
#include "castorette/context_store.hpp"
#include "castorette/model_store.hpp"
#include "castorette/runner.hpp"
#include "castorette/scheduler.hpp"
#include "castorette/timeseries_store.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <istream>
#include <memory>
#include <optional>
#include <string>
#include <thread>

namespace castorette {

inline constexpr int kSchemaVersion = 1;

/// Queues served by the platform on top of the ones the runner uses.
namespace queues {
inline constexpr const char* kContextGraph = "context.graph";
inline constexpr const char* kTsCompare = "ts.compare";
inline constexpr const char* kTsIngestCsv = "ts.ingest_csv";
inline constexpr const char* kModelPut = "model.put";
inline constexpr const char* kModelValidate = "model.validate";
inline constexpr const char* kModelList = "model.list";
inline constexpr const char* kModelHierarchy = "model.hierarchy";
inline constexpr const char* kModelVersions = "model.versions";
inline constexpr const char* kModelActivate = "model.activate";
inline constexpr const char* kModelSchedules = "model.schedules";
inline constexpr const char* kSchedQueues = "sched.queues";
inline constexpr const char* kSchedRunNow = "sched.run_now";
inline constexpr const char* kJobsRecent = "jobs.recent";
} // namespace queues

/// {"port":8080, "data_dir":"data", "workers":4, "holidays":"holidays.json"}
struct ServiceConfig {
    int port = 8080;
    std::filesystem::path data_dir;
    std::size_t workers = 4;
    std::optional<std::filesystem::path> holidays;
    /// Types given to entities and signals that CSV ingest creates.
    std::string default_entity_type = "site";
    std::string default_signal_type = "measurement";
    bool strict_ingest = false;

    /// Throws Io or ValidationError.
    static ServiceConfig load(const std::filesystem::path& path);
    static ServiceConfig from_json(const nlohmann::json& j);
};

struct CsvRowError {
    std::size_t line = 0; ///< 1-based, header is line 1
    std::string error;
    std::string detail;
};

struct CsvReport {
    std::size_t rows = 0;
    std::size_t stored = 0;
    std::vector<CsvRowError> errors;
};

nlohmann::json to_json(const CsvReport& r);
CsvReport csv_report_from_json(const nlohmann::json& j);

/// Every store, the bus with its handlers, the runner and the scheduler,
/// wired together. All cross-module traffic goes over the bus.
class Platform {
public:
    explicit Platform(const ServiceConfig& config, Clock clock = Clock::wall());
    ~Platform();

    Platform(const Platform&) = delete;
    Platform& operator=(const Platform&) = delete;

    ContextStore& context() { return *context_; }
    TimeSeriesStore& series() { return *series_; }
    ModelStore& models() { return *models_; }
    Bus& bus() { return *bus_; }
    Runner& runner() { return *runner_; }
    Scheduler& scheduler() { return *scheduler_; }
    Clock& clock() { return clock_; }
    const ServiceConfig& config() const { return config_; }

    /// Header must be exactly `ts,entity,signal,value`. Bad rows are reported
    /// and skipped; a bad header throws MalformedRow.
    CsvReport ingest_csv(std::istream& in, std::optional<bool> strict = std::nullopt);
    CsvReport ingest_csv(const std::filesystem::path& path, std::optional<bool> strict = std::nullopt);

    /// Schedules of every model and version with what the stores say already ran.
    std::vector<ScheduleEntry> schedules();

    void checkpoint();

private:
    void register_handlers();
    nlohmann::json ingest_csv_text(const std::string& text, bool strict);

    ServiceConfig config_;
    Clock clock_;
    transform::HolidayCalendar holidays_;
    std::unique_ptr<ContextStore> context_;
    std::unique_ptr<TimeSeriesStore> series_;
    std::unique_ptr<ModelStore> models_;
    std::unique_ptr<Bus> bus_;
    std::unique_ptr<Runner> runner_;
    std::unique_ptr<Scheduler> scheduler_;
};

/// HTTP edge over the platform's bus. Responses carry schema_version; errors
/// are {error, detail} with a matching status.
class HttpServer {
public:
    explicit HttpServer(Platform& platform);
    ~HttpServer();

    /// Binds and serves on a background thread. Port 0 picks a free port.
    /// Returns the bound port; throws Io when binding fails.
    int start(const std::string& host, int port);
    /// Serves on the calling thread until stop().
    void listen(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::thread thread_;
};

/// HTTP status for an error code.
int http_status(ErrorCode code) noexcept;

} // namespace castorette
