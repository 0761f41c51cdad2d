#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "json.hpp"

namespace brickpad::service {

struct ApiEvent {
    std::uint64_t seq = 0;
    std::string type;  // telemetry | link | schema | log
    nlohmann::json payload;

    nlohmann::json to_json() const { return {{"seq", seq}, {"type", type}, {"payload", payload}}; }
};

/// Fans every published event out to all subscribers with one global seq.
/// A subscriber that falls more than `capacity` events behind is dropped.
class EventHub {
public:
    class Subscription {
    public:
        /// Next event, or nullopt on timeout. After close, drains what is
        /// left and then returns nullopt forever.
        std::optional<ApiEvent> next(std::chrono::milliseconds timeout);
        bool closed() const;
        bool overflowed() const;

    private:
        friend class EventHub;
        mutable std::mutex mutex_;
        std::condition_variable ready_;
        std::deque<ApiEvent> queue_;
        bool closed_ = false;
        bool overflowed_ = false;
    };

    explicit EventHub(std::size_t capacity = 256) : capacity_(capacity) {}

    std::uint64_t publish(std::string type, nlohmann::json payload);
    std::shared_ptr<Subscription> subscribe();
    void unsubscribe(const std::shared_ptr<Subscription>& sub);
    /// Ends every stream after its queued events are delivered.
    void close_all();
    std::size_t subscribers() const;
    std::uint64_t last_seq() const;

private:
    std::size_t capacity_;
    mutable std::mutex mutex_;
    std::uint64_t seq_ = 0;
    std::list<std::shared_ptr<Subscription>> subs_;
};

}  // namespace brickpad::service
