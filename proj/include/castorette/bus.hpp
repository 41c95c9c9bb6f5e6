#pragma once

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace castorette {

/// Queue and topic names shared with the service edge.
namespace queues {
inline constexpr const char* kTsQuery = "ts.query";
inline constexpr const char* kTsIngest = "ts.ingest";
inline constexpr const char* kModelGet = "model.get";
inline constexpr const char* kModelPutVersion = "model.put_version";
inline constexpr const char* kJobCompleted = "job.completed";
inline constexpr const char* kJobFailed = "job.failed";
} // namespace queues

struct Envelope {
    std::string queue;
    std::uint64_t correlation_id = 0;
    nlohmann::json payload;
    std::optional<std::string> reply_to;
};

struct BusOptions {
    std::size_t handler_threads = 4;
    /// Messages a subscriber may have pending before it is dropped.
    std::size_t subscriber_buffer = 1024;
};

/// In-process message fabric: request/reply over named queues served by a
/// bounded worker pool, plus topic publish/subscribe. Delivery is at most
/// once and nothing is persisted.
class Bus {
public:
    using Handler = std::function<nlohmann::json(const nlohmann::json& payload)>;
    using Callback = std::function<void(const nlohmann::json& payload)>;
    using SubscriptionId = std::uint64_t;

    explicit Bus(BusOptions options = {});
    ~Bus();

    Bus(const Bus&) = delete;
    Bus& operator=(const Bus&) = delete;

    /// Replaces any handler already registered on `queue`.
    void register_handler(const std::string& queue, Handler handler);
    void unregister_handler(const std::string& queue);
    bool has_handler(const std::string& queue) const;

    /// Throws NoHandler or Timeout. A handler that throws Error has the same
    /// error rethrown here; other exceptions arrive as InvalidArgument.
    nlohmann::json request(const std::string& queue, const nlohmann::json& payload,
                           std::chrono::milliseconds timeout = std::chrono::seconds(30));

    /// Never blocks on slow subscribers.
    void publish(const std::string& topic, const nlohmann::json& payload);

    /// Callbacks for one subscription run on its own thread, in publish order.
    SubscriptionId subscribe(const std::string& topic, Callback callback);
    void unsubscribe(SubscriptionId id);
    /// False once the subscription was dropped for lagging or removed.
    bool is_subscribed(SubscriptionId id) const;

    /// Blocks until every live subscriber has drained its buffer.
    void flush();

    std::size_t in_flight() const;

private:
    struct Reply {
        bool ok = false;
        nlohmann::json payload;
        int code = 0;
        std::string detail;
    };
    struct Pending {
        std::mutex mu;
        std::condition_variable cv;
        std::optional<Reply> reply;
    };
    struct Subscriber {
        SubscriptionId id = 0;
        std::string topic;
        Callback callback;
        std::mutex mu;
        std::condition_variable cv;
        std::deque<nlohmann::json> buffer;
        bool busy = false;
        bool stop = false;
        std::thread thread;
    };

    void worker_loop();
    void deliver(const Envelope& request, Reply reply);
    void subscriber_loop(Subscriber& sub);
    void stop_subscriber(const std::shared_ptr<Subscriber>& sub);

    BusOptions options_;
    std::atomic<std::uint64_t> next_correlation_{1};

    mutable std::mutex handlers_mu_;
    std::map<std::string, std::shared_ptr<Handler>> handlers_;

    mutable std::mutex pending_mu_;
    std::map<std::uint64_t, std::shared_ptr<Pending>> pending_;

    std::mutex work_mu_;
    std::condition_variable work_cv_;
    std::deque<std::pair<Envelope, std::shared_ptr<Handler>>> work_;
    bool stopping_ = false;
    std::vector<std::thread> workers_;

    mutable std::mutex subs_mu_;
    std::map<SubscriptionId, std::shared_ptr<Subscriber>> subs_;
    SubscriptionId next_sub_ = 1;
};

} // namespace castorette
