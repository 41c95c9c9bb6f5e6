#pragma once

#include "castorette/pipeline.hpp"
#include "castorette/time.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace castorette {

enum class ClockMode { Wall, Virtual };

/// Wall time, or a virtual time that moves only when told to.
class Clock {
public:
    static Clock wall();
    static Clock virtual_at(Timestamp start);

    ClockMode mode() const noexcept { return mode_; }
    Timestamp now() const;
    /// Virtual clocks only; never moves backwards.
    void advance_to(Timestamp t);
    void advance_by(Duration d) { advance_to(now() + d); }

    Clock(const Clock& other) : mode_(other.mode_), virtual_now_(other.virtual_now_.load()) {}

private:
    Clock(ClockMode mode, std::int64_t t) : mode_(mode), virtual_now_(t) {}
    ClockMode mode_;
    std::atomic<std::int64_t> virtual_now_;
};

struct Task {
    TaskKind task = TaskKind::Train;
    /// Model id for training, model version id for scoring.
    std::int64_t subject = 0;
    Timestamp due;

    friend bool operator==(const Task&, const Task&) = default;
};

nlohmann::json to_json(const Task& t);

struct QueueState {
    std::deque<Task> train_now, train_later, score_now, score_later;

    std::size_t size() const { return train_now.size() + train_later.size() + score_now.size() + score_later.size(); }
};

nlohmann::json to_json(const QueueState& q);

/// Every occurrence of `config`: time + k * repeat for k >= 0, not past
/// `until`, not past `end`.
std::vector<Timestamp> occurrences(const DeploymentConfig& config, Timestamp end);

/// One schedule the scheduler should follow, plus the last due time already
/// executed for it (from the stores), if any.
struct ScheduleEntry {
    TaskKind task = TaskKind::Train;
    std::int64_t subject = 0;
    DeploymentConfig config;
    std::optional<Timestamp> last_done;
};

using ScheduleSource = std::function<std::vector<ScheduleEntry>()>;

struct JobRequest {
    TaskKind task = TaskKind::Train;
    std::int64_t subject = 0;
    Timestamp due;
};

enum class JobStatus { Ok, Failed };

struct JobResult {
    JobStatus status = JobStatus::Failed;
    /// Version id (train) or forecast layer id (score).
    std::optional<std::int64_t> produced;
    std::optional<std::string> error_log;
    double duration = 0.0; ///< seconds
};

nlohmann::json to_json(const JobRequest& j);
nlohmann::json to_json(const JobResult& r);

using Executor = std::function<JobResult(const JobRequest&)>;

struct JobRecord {
    JobRequest job;
    Timestamp dispatched_at;
    std::optional<JobResult> result;
};

struct SchedulerOptions {
    std::size_t workers = 4;
    /// Future occurrences kept in a later queue per subject.
    std::size_t horizon = 24;
    std::size_t recent_jobs = 200;
};

/// Worker count from CASTORETTE_WORKERS when set and valid, else `fallback`.
std::size_t workers_from_env(std::size_t fallback);

/// Now/later task queues over train and score schedules, a clock and a
/// bounded worker pool.
///
/// init_action rebuilds the queues from the schedule source. update_action
/// promotes later tasks that fell due and picks up new or changed schedules.
/// poll_action hands due tasks to idle workers, training first. When several
/// occurrences of one schedule are overdue at once they collapse into a
/// single run at the latest of them.
class Scheduler {
public:
    Scheduler(ScheduleSource source, Executor executor, Clock& clock, SchedulerOptions options = {});
    ~Scheduler();

    Scheduler(const Scheduler&) = delete;
    Scheduler& operator=(const Scheduler&) = delete;

    /// Throws StoreUnavailable when the source fails.
    QueueState init_action();
    /// Returns the jobs handed to workers.
    std::vector<JobRequest> poll_action();
    /// Returns how many tasks moved from later to now.
    std::size_t update_action();

    /// Adds a one-off task due now (dashboard "run now").
    void enqueue_now(TaskKind task, std::int64_t subject);

    QueueState queues() const;
    std::vector<JobRecord> recent_jobs() const;
    std::size_t busy_workers() const;
    std::size_t completed_jobs() const;

    /// Blocks until no job is running.
    void wait_idle();

    /// Poll/update loop on the clock until stop() is called; a finished job
    /// triggers an early poll. In-flight jobs are drained before returning.
    void run_forever(Duration poll_interval, Duration update_interval);
    void run_forever(std::chrono::milliseconds poll_interval, std::chrono::milliseconds update_interval);
    void stop();

    /// Called after every job with its request and result.
    void on_job_finished(std::function<void(const JobRequest&, const JobResult&)> callback);

private:
    struct Subject {
        ScheduleEntry entry;
        /// Latest due time placed in a now queue or already executed.
        std::optional<Timestamp> done;
        /// Next occurrence index not yet materialized.
        std::int64_t next_k = 0;
        bool active = true;
    };
    using SubjectKey = std::pair<int, std::int64_t>;

    static SubjectKey key_of(TaskKind t, std::int64_t subject) { return {static_cast<int>(t), subject}; }
    std::deque<Task>& now_queue(TaskKind t) { return t == TaskKind::Train ? queues_.train_now : queues_.score_now; }
    std::deque<Task>& later_queue(TaskKind t) { return t == TaskKind::Train ? queues_.train_later : queues_.score_later; }

    std::vector<ScheduleEntry> fetch();
    void admit(Subject& s, Timestamp now);
    std::size_t promote(Subject& s, Timestamp now);
    void replenish(Subject& s, Timestamp now);
    void push_now(const Task& t);
    void drop_later(TaskKind t, std::int64_t subject);
    void sync_locked(const std::vector<ScheduleEntry>& entries, Timestamp now, bool rebuild);
    void worker_loop();
    void run_job(JobRequest job, std::size_t record);
    void loop(std::chrono::milliseconds poll, std::chrono::milliseconds update);

    ScheduleSource source_;
    Executor executor_;
    Clock& clock_;
    SchedulerOptions options_;

    mutable std::mutex mu_;
    std::condition_variable cv_;
    QueueState queues_;
    std::map<SubjectKey, Subject> subjects_;
    bool initialized_ = false;
    std::size_t busy_ = 0;
    std::size_t completed_ = 0;
    bool stop_ = false;
    bool wake_ = false;
    std::deque<JobRecord> recent_;
    std::size_t recent_base_ = 0;
    std::deque<std::pair<JobRequest, std::size_t>> dispatch_;
    bool shutdown_ = false;
    std::vector<std::thread> pool_;
    std::function<void(const JobRequest&, const JobResult&)> finished_cb_;
};

} // namespace castorette
