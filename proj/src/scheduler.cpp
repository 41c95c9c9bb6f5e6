#include "castorette/scheduler.hpp"

#include "castorette/error.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>

namespace castorette {

using nlohmann::json;

// ---- clock -----------------------------------------------------------------

Clock Clock::wall() { return Clock(ClockMode::Wall, 0); }

Clock Clock::virtual_at(Timestamp start) { return Clock(ClockMode::Virtual, epoch_seconds(start)); }

Timestamp Clock::now() const {
    if (mode_ == ClockMode::Wall) return std::chrono::floor<Duration>(std::chrono::system_clock::now());
    return from_epoch(virtual_now_.load());
}

void Clock::advance_to(Timestamp t) {
    if (mode_ != ClockMode::Virtual) fail(ErrorCode::InvalidArgument, "only a virtual clock can be advanced");
    const auto target = epoch_seconds(t);
    auto cur = virtual_now_.load();
    while (cur < target && !virtual_now_.compare_exchange_weak(cur, target)) {
    }
}

// ---- plain data ------------------------------------------------------------

json to_json(const Task& t) {
    return json{{"task", to_string(t.task)}, {"subject", t.subject}, {"due", format_rfc3339(t.due)}};
}

json to_json(const QueueState& q) {
    auto list = [](const std::deque<Task>& d) {
        json a = json::array();
        for (const auto& t : d) a.push_back(to_json(t));
        return a;
    };
    return json{{"train_now", list(q.train_now)},
                {"train_later", list(q.train_later)},
                {"score_now", list(q.score_now)},
                {"score_later", list(q.score_later)}};
}

json to_json(const JobRequest& j) {
    return json{{"task", to_string(j.task)}, {"subject", j.subject}, {"due", format_rfc3339(j.due)}};
}

json to_json(const JobResult& r) {
    return json{{"status", r.status == JobStatus::Ok ? "OK" : "FAILED"},
                {"produced", r.produced ? json(*r.produced) : json(nullptr)},
                {"error_log", r.error_log ? json(*r.error_log) : json(nullptr)},
                {"duration", r.duration}};
}

std::vector<Timestamp> occurrences(const DeploymentConfig& config, Timestamp end) {
    std::vector<Timestamp> out;
    const Timestamp last = config.until ? std::min(*config.until, end) : end;
    if (config.time > last) return out;
    if (config.repeat <= Duration{0}) return {config.time};
    for (Timestamp t = config.time; t <= last; t += config.repeat) out.push_back(t);
    return out;
}

std::size_t workers_from_env(std::size_t fallback) {
    const char* v = std::getenv("CASTORETTE_WORKERS");
    if (!v || !*v) return fallback;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 0) {
        spdlog::warn("ignoring CASTORETTE_WORKERS='{}'", v);
        return fallback;
    }
    return static_cast<std::size_t>(n);
}

// ---- occurrence arithmetic ---------------------------------------------------

namespace {

Timestamp occurrence(const DeploymentConfig& c, std::int64_t k) { return c.time + c.repeat * k; }

bool within_until(const DeploymentConfig& c, Timestamp t) { return !c.until || t <= *c.until; }

/// Largest k with occurrence(k) <= t and within until, or -1.
std::int64_t last_index_at(const DeploymentConfig& c, Timestamp t) {
    if (c.until) t = std::min(t, *c.until);
    if (t < c.time) return -1;
    if (c.repeat <= Duration{0}) return 0;
    return (t - c.time) / c.repeat;
}

/// Smallest k with occurrence(k) > t.
std::int64_t first_index_after(const DeploymentConfig& c, Timestamp t) {
    if (t < c.time) return 0;
    if (c.repeat <= Duration{0}) return 1;
    return (t - c.time) / c.repeat + 1;
}

bool index_exists(const DeploymentConfig& c, std::int64_t k) {
    if (k < 0) return false;
    if (c.repeat <= Duration{0}) return k == 0 && within_until(c, c.time);
    return within_until(c, occurrence(c, k));
}

void insert_sorted(std::deque<Task>& q, const Task& t) {
    const auto it = std::upper_bound(q.begin(), q.end(), t, [](const Task& a, const Task& b) {
        return a.due != b.due ? a.due < b.due : a.subject < b.subject;
    });
    q.insert(it, t);
}

} // namespace

// ---- scheduler ---------------------------------------------------------------

Scheduler::Scheduler(ScheduleSource source, Executor executor, Clock& clock, SchedulerOptions options)
    : source_(std::move(source)), executor_(std::move(executor)), clock_(clock), options_(options) {
    for (std::size_t i = 0; i < options_.workers; ++i) pool_.emplace_back([this] { worker_loop(); });
}

Scheduler::~Scheduler() {
    stop();
    {
        std::lock_guard lock(mu_);
        shutdown_ = true;
    }
    cv_.notify_all();
    for (auto& t : pool_) t.join();
}

void Scheduler::worker_loop() {
    for (;;) {
        std::pair<JobRequest, std::size_t> item;
        {
            std::unique_lock lock(mu_);
            cv_.wait(lock, [&] { return shutdown_ || !dispatch_.empty(); });
            if (dispatch_.empty()) return;
            item = dispatch_.front();
            dispatch_.pop_front();
        }
        run_job(item.first, item.second);
    }
}

std::vector<ScheduleEntry> Scheduler::fetch() {
    try {
        return source_();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::StoreUnavailable) throw;
        fail(ErrorCode::StoreUnavailable, e.what());
    } catch (const std::exception& e) {
        fail(ErrorCode::StoreUnavailable, e.what());
    }
}

void Scheduler::push_now(const Task& t) {
    auto& q = now_queue(t.task);
    // One pending run per schedule: a newer due time replaces the older one.
    for (auto& existing : q) {
        if (existing.subject == t.subject) {
            existing.due = std::max(existing.due, t.due);
            return;
        }
    }
    q.push_back(t);
}

void Scheduler::drop_later(TaskKind t, std::int64_t subject) {
    auto& q = later_queue(t);
    std::erase_if(q, [&](const Task& x) { return x.subject == subject; });
}

std::size_t Scheduler::promote(Subject& s, Timestamp now) {
    const auto& c = s.entry.config;
    const std::int64_t k_last = last_index_at(c, now);
    if (k_last < s.next_k) return 0;
    const Timestamp due = occurrence(c, k_last);
    s.next_k = k_last + 1;
    if (s.done && due <= *s.done) return 0;
    s.done = due;
    push_now(Task{s.entry.task, s.entry.subject, due});
    return 1;
}

void Scheduler::replenish(Subject& s, Timestamp now) {
    const auto& c = s.entry.config;
    auto& q = later_queue(s.entry.task);
    std::size_t have = 0;
    for (const auto& t : q) have += t.subject == s.entry.subject;
    if (s.next_k < first_index_after(c, now)) s.next_k = first_index_after(c, now);
    while (have < options_.horizon && index_exists(c, s.next_k)) {
        insert_sorted(q, Task{s.entry.task, s.entry.subject, occurrence(c, s.next_k)});
        ++s.next_k;
        ++have;
    }
}

void Scheduler::admit(Subject& s, Timestamp now) {
    s.next_k = s.done ? first_index_after(s.entry.config, *s.done) : 0;
    promote(s, now);
    replenish(s, now);
}

void Scheduler::sync_locked(const std::vector<ScheduleEntry>& entries, Timestamp now, bool rebuild) {
    std::map<SubjectKey, Subject> next;
    for (const auto& e : entries) {
        // An until before time is simply expired; a negative repeat is unusable.
        if (e.config.repeat < Duration{0}) {
            spdlog::warn("scheduler: skipping {} {} with negative repeat", to_string(e.task), e.subject);
            continue;
        }
        const auto key = key_of(e.task, e.subject);
        const auto it = subjects_.find(key);
        Subject s{e, e.last_done, 0, true};
        if (it != subjects_.end()) {
            if (it->second.done && (!s.done || *it->second.done > *s.done)) s.done = it->second.done;
            if (!rebuild && it->second.entry.config == e.config) {
                s.next_k = it->second.next_k;
                next.emplace(key, std::move(s));
                continue;
            }
            drop_later(e.task, e.subject);
        }
        admit(s, now);
        next.emplace(key, std::move(s));
    }
    for (const auto& [key, s] : subjects_) {
        if (!next.contains(key)) drop_later(s.entry.task, s.entry.subject);
    }
    subjects_ = std::move(next);
}

QueueState Scheduler::init_action() {
    const auto entries = fetch();
    std::lock_guard lock(mu_);
    const Timestamp now = clock_.now();
    queues_ = QueueState{};
    sync_locked(entries, now, true);
    initialized_ = true;
    return queues_;
}

std::size_t Scheduler::update_action() {
    const auto entries = fetch();
    std::lock_guard lock(mu_);
    const Timestamp now = clock_.now();
    if (!initialized_) {
        queues_ = QueueState{};
        sync_locked(entries, now, true);
        initialized_ = true;
        return 0;
    }
    sync_locked(entries, now, false);

    std::size_t moved = 0;
    std::set<SubjectKey> touched;
    for (const TaskKind kind : {TaskKind::Train, TaskKind::Score}) {
        auto& later = later_queue(kind);
        // Due tasks, oldest first; overdue runs of one schedule collapse.
        std::vector<std::int64_t> order;
        std::map<std::int64_t, Timestamp> latest;
        while (!later.empty() && later.front().due <= now) {
            const Task t = later.front();
            later.pop_front();
            auto [it, fresh] = latest.try_emplace(t.subject, t.due);
            if (fresh) order.push_back(t.subject);
            else it->second = std::max(it->second, t.due);
        }
        for (const auto subject : order) {
            auto& s = subjects_.at(key_of(kind, subject));
            const Timestamp due = latest.at(subject);
            if (s.done && due <= *s.done) continue;
            s.done = due;
            push_now(Task{kind, subject, due});
            touched.insert(key_of(kind, subject));
            ++moved;
        }
    }
    // Occurrences past the materialized horizon that are already due.
    for (auto& [key, s] : subjects_) {
        if (promote(s, now) > 0 && touched.insert(key).second) ++moved;
        replenish(s, now);
    }
    return moved;
}

void Scheduler::enqueue_now(TaskKind task, std::int64_t subject) {
    std::lock_guard lock(mu_);
    push_now(Task{task, subject, clock_.now()});
    wake_ = true;
    cv_.notify_all();
}

std::vector<JobRequest> Scheduler::poll_action() {
    std::vector<JobRequest> jobs;
    std::lock_guard lock(mu_);
    const Timestamp now = clock_.now();
    std::size_t idle = options_.workers > busy_ ? options_.workers - busy_ : 0;
    for (const TaskKind kind : {TaskKind::Train, TaskKind::Score}) {
        auto& q = now_queue(kind);
        while (idle > 0 && !q.empty()) {
            const Task t = q.front();
            q.pop_front();
            jobs.push_back(JobRequest{t.task, t.subject, t.due});
            --idle;
        }
    }
    for (const auto& job : jobs) {
        ++busy_;
        recent_.push_back(JobRecord{job, now, std::nullopt});
        const std::size_t record = recent_base_ + recent_.size() - 1;
        while (recent_.size() > options_.recent_jobs) {
            recent_.pop_front();
            ++recent_base_;
        }
        dispatch_.emplace_back(job, record);
    }
    if (!jobs.empty()) cv_.notify_all();
    return jobs;
}

void Scheduler::run_job(JobRequest job, std::size_t record) {
    const auto start = std::chrono::steady_clock::now();
    JobResult result;
    try {
        result = executor_(job);
    } catch (const std::exception& e) {
        result.status = JobStatus::Failed;
        result.error_log = e.what();
    }
    if (result.duration == 0.0) {
        result.duration = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    std::function<void(const JobRequest&, const JobResult&)> cb;
    {
        std::lock_guard lock(mu_);
        cb = finished_cb_;
    }
    if (cb) {
        try {
            cb(job, result);
        } catch (const std::exception& e) {
            spdlog::warn("scheduler: job callback threw: {}", e.what());
        }
    }
    {
        std::lock_guard lock(mu_);
        if (record >= recent_base_) recent_[record - recent_base_].result = result;
        --busy_;
        ++completed_;
        wake_ = true;
    }
    cv_.notify_all();
}

QueueState Scheduler::queues() const {
    std::lock_guard lock(mu_);
    return queues_;
}

std::vector<JobRecord> Scheduler::recent_jobs() const {
    std::lock_guard lock(mu_);
    return {recent_.begin(), recent_.end()};
}

std::size_t Scheduler::busy_workers() const {
    std::lock_guard lock(mu_);
    return busy_;
}

std::size_t Scheduler::completed_jobs() const {
    std::lock_guard lock(mu_);
    return completed_;
}

void Scheduler::wait_idle() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return busy_ == 0; });
}

void Scheduler::on_job_finished(std::function<void(const JobRequest&, const JobResult&)> callback) {
    std::lock_guard lock(mu_);
    finished_cb_ = std::move(callback);
}

void Scheduler::stop() {
    {
        std::lock_guard lock(mu_);
        stop_ = true;
    }
    cv_.notify_all();
}

void Scheduler::run_forever(Duration poll_interval, Duration update_interval) {
    loop(std::chrono::duration_cast<std::chrono::milliseconds>(poll_interval),
         std::chrono::duration_cast<std::chrono::milliseconds>(update_interval));
}

void Scheduler::run_forever(std::chrono::milliseconds poll_interval, std::chrono::milliseconds update_interval) {
    loop(poll_interval, update_interval);
}

void Scheduler::loop(std::chrono::milliseconds poll, std::chrono::milliseconds update) {
    if (clock_.mode() != ClockMode::Wall) fail(ErrorCode::InvalidArgument, "run_forever needs a wall clock");
    {
        std::lock_guard lock(mu_);
        stop_ = false;
    }
    using steady = std::chrono::steady_clock;
    try {
        init_action();
    } catch (const std::exception& e) {
        spdlog::error("scheduler: init failed: {}", e.what());
    }
    auto next_poll = steady::now();
    auto next_update = steady::now() + update;
    for (;;) {
        {
            std::unique_lock lock(mu_);
            cv_.wait_until(lock, std::min(next_poll, next_update), [&] { return stop_ || wake_; });
            if (stop_) break;
            wake_ = false;
        }
        const auto now = steady::now();
        if (now >= next_update) {
            try {
                const auto moved = update_action();
                if (moved > 0) spdlog::info("scheduler: {} task(s) now due", moved);
            } catch (const std::exception& e) {
                spdlog::error("scheduler: update failed: {}", e.what());
            }
            next_update = now + update;
        }
        poll_action();
        if (now >= next_poll) next_poll = now + poll;
    }
    wait_idle();
}

} // namespace castorette
