#include "castorette/bus.hpp"

#include "castorette/error.hpp"

#include <spdlog/spdlog.h>

namespace castorette {

using nlohmann::json;

Bus::Bus(BusOptions options) : options_(options) {
    if (options_.handler_threads == 0) options_.handler_threads = 1;
    if (options_.subscriber_buffer == 0) options_.subscriber_buffer = 1;
    for (std::size_t i = 0; i < options_.handler_threads; ++i) workers_.emplace_back([this] { worker_loop(); });
}

Bus::~Bus() {
    {
        std::lock_guard lock(work_mu_);
        stopping_ = true;
    }
    work_cv_.notify_all();
    for (auto& t : workers_) t.join();

    std::map<SubscriptionId, std::shared_ptr<Subscriber>> subs;
    {
        std::lock_guard lock(subs_mu_);
        subs.swap(subs_);
    }
    for (auto& [id, s] : subs) stop_subscriber(s);
}

void Bus::register_handler(const std::string& queue, Handler handler) {
    std::lock_guard lock(handlers_mu_);
    handlers_[queue] = std::make_shared<Handler>(std::move(handler));
}

void Bus::unregister_handler(const std::string& queue) {
    std::lock_guard lock(handlers_mu_);
    handlers_.erase(queue);
}

bool Bus::has_handler(const std::string& queue) const {
    std::lock_guard lock(handlers_mu_);
    return handlers_.contains(queue);
}

json Bus::request(const std::string& queue, const json& payload, std::chrono::milliseconds timeout) {
    std::shared_ptr<Handler> handler;
    {
        std::lock_guard lock(handlers_mu_);
        const auto it = handlers_.find(queue);
        if (it == handlers_.end()) fail(ErrorCode::NoHandler, queue);
        handler = it->second;
    }
    Envelope env{queue, next_correlation_.fetch_add(1), payload, "reply." + queue};
    auto pending = std::make_shared<Pending>();
    {
        std::lock_guard lock(pending_mu_);
        pending_[env.correlation_id] = pending;
    }
    const auto id = env.correlation_id;
    {
        std::lock_guard lock(work_mu_);
        work_.emplace_back(std::move(env), std::move(handler));
    }
    work_cv_.notify_one();

    std::unique_lock lock(pending->mu);
    const bool done = pending->cv.wait_for(lock, timeout, [&] { return pending->reply.has_value(); });
    {
        std::lock_guard plock(pending_mu_);
        pending_.erase(id);
    }
    if (!done) fail(ErrorCode::Timeout, queue + " after " + std::to_string(timeout.count()) + " ms");
    Reply reply = std::move(*pending->reply);
    if (!reply.ok) throw Error(static_cast<ErrorCode>(reply.code), reply.detail);
    return std::move(reply.payload);
}

void Bus::deliver(const Envelope& request, Reply reply) {
    std::shared_ptr<Pending> pending;
    {
        std::lock_guard lock(pending_mu_);
        const auto it = pending_.find(request.correlation_id);
        if (it == pending_.end()) return; // requester gave up
        pending = it->second;
    }
    {
        std::lock_guard lock(pending->mu);
        pending->reply = std::move(reply);
    }
    pending->cv.notify_all();
}

void Bus::worker_loop() {
    for (;;) {
        std::pair<Envelope, std::shared_ptr<Handler>> item;
        {
            std::unique_lock lock(work_mu_);
            work_cv_.wait(lock, [&] { return stopping_ || !work_.empty(); });
            if (work_.empty()) return;
            item = std::move(work_.front());
            work_.pop_front();
        }
        Reply reply;
        try {
            reply.payload = (*item.second)(item.first.payload);
            reply.ok = true;
        } catch (const Error& e) {
            reply.code = static_cast<int>(e.code());
            reply.detail = e.detail();
        } catch (const std::exception& e) {
            reply.code = static_cast<int>(ErrorCode::InvalidArgument);
            reply.detail = e.what();
        }
        deliver(item.first, std::move(reply));
    }
}

std::size_t Bus::in_flight() const {
    std::lock_guard lock(pending_mu_);
    return pending_.size();
}

void Bus::publish(const std::string& topic, const json& payload) {
    std::vector<std::shared_ptr<Subscriber>> lagging;
    {
        std::lock_guard lock(subs_mu_);
        for (auto it = subs_.begin(); it != subs_.end();) {
            auto& sub = it->second;
            if (sub->topic != topic) {
                ++it;
                continue;
            }
            bool overflow = false;
            {
                std::lock_guard slock(sub->mu);
                if (sub->buffer.size() >= options_.subscriber_buffer) overflow = true;
                else sub->buffer.push_back(payload);
            }
            if (overflow) {
                spdlog::warn("bus: subscriber {} on '{}' is lagging ({} pending), dropping it", sub->id, topic,
                             options_.subscriber_buffer);
                lagging.push_back(sub);
                it = subs_.erase(it);
                continue;
            }
            sub->cv.notify_one();
            ++it;
        }
    }
    // Joining happens outside the lock and off the subscriber's own thread.
    for (auto& s : lagging) {
        {
            std::lock_guard slock(s->mu);
            s->stop = true;
        }
        s->cv.notify_all();
        if (s->thread.get_id() == std::this_thread::get_id()) s->thread.detach();
        else std::thread([s] { s->thread.join(); }).detach();
    }
}

Bus::SubscriptionId Bus::subscribe(const std::string& topic, Callback callback) {
    auto sub = std::make_shared<Subscriber>();
    sub->topic = topic;
    sub->callback = std::move(callback);
    std::lock_guard lock(subs_mu_);
    sub->id = next_sub_++;
    Subscriber* raw = sub.get();
    sub->thread = std::thread([this, raw] { subscriber_loop(*raw); });
    subs_[sub->id] = sub;
    return sub->id;
}

void Bus::subscriber_loop(Subscriber& sub) {
    for (;;) {
        json msg;
        {
            std::unique_lock lock(sub.mu);
            sub.cv.wait(lock, [&] { return sub.stop || !sub.buffer.empty(); });
            if (sub.stop) {
                sub.buffer.clear();
                sub.busy = false;
                sub.cv.notify_all();
                return;
            }
            msg = std::move(sub.buffer.front());
            sub.buffer.pop_front();
            sub.busy = true;
        }
        try {
            sub.callback(msg);
        } catch (const std::exception& e) {
            spdlog::warn("bus: subscriber {} on '{}' threw: {}", sub.id, sub.topic, e.what());
        }
        {
            std::lock_guard lock(sub.mu);
            sub.busy = false;
        }
        sub.cv.notify_all();
    }
}

void Bus::stop_subscriber(const std::shared_ptr<Subscriber>& sub) {
    {
        std::lock_guard lock(sub->mu);
        sub->stop = true;
    }
    sub->cv.notify_all();
    if (sub->thread.joinable()) {
        if (sub->thread.get_id() == std::this_thread::get_id()) sub->thread.detach();
        else sub->thread.join();
    }
}

void Bus::unsubscribe(SubscriptionId id) {
    std::shared_ptr<Subscriber> sub;
    {
        std::lock_guard lock(subs_mu_);
        const auto it = subs_.find(id);
        if (it == subs_.end()) return;
        sub = it->second;
        subs_.erase(it);
    }
    stop_subscriber(sub);
}

bool Bus::is_subscribed(SubscriptionId id) const {
    std::lock_guard lock(subs_mu_);
    return subs_.contains(id);
}

void Bus::flush() {
    std::vector<std::shared_ptr<Subscriber>> subs;
    {
        std::lock_guard lock(subs_mu_);
        for (auto& [id, s] : subs_) subs.push_back(s);
    }
    for (auto& s : subs) {
        std::unique_lock lock(s->mu);
        s->cv.wait(lock, [&] { return s->stop || (s->buffer.empty() && !s->busy); });
    }
}

} // namespace castorette
