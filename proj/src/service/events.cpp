#include "brickpad/service/events.hpp"

namespace brickpad::service {

std::optional<ApiEvent> EventHub::Subscription::next(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    ready_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; });
    if (queue_.empty()) return std::nullopt;
    auto e = std::move(queue_.front());
    queue_.pop_front();
    return e;
}

bool EventHub::Subscription::closed() const {
    std::lock_guard lock(mutex_);
    return closed_ && queue_.empty();
}

bool EventHub::Subscription::overflowed() const {
    std::lock_guard lock(mutex_);
    return overflowed_;
}

std::uint64_t EventHub::publish(std::string type, nlohmann::json payload) {
    std::lock_guard lock(mutex_);
    ApiEvent event{++seq_, std::move(type), std::move(payload)};
    for (auto it = subs_.begin(); it != subs_.end();) {
        auto& sub = **it;
        bool dropped = false;
        {
            std::lock_guard sub_lock(sub.mutex_);
            if (sub.queue_.size() >= capacity_) {
                dropped = true;
                // slow consumer: it refetches state instead of seeing a gap
                sub.overflowed_ = true;
                sub.closed_ = true;
                sub.queue_.clear();
            } else {
                sub.queue_.push_back(event);
            }
        }
        sub.ready_.notify_all();
        if (dropped) {
            it = subs_.erase(it);
        } else {
            ++it;
        }
    }
    return event.seq;
}

std::shared_ptr<EventHub::Subscription> EventHub::subscribe() {
    auto sub = std::make_shared<Subscription>();
    std::lock_guard lock(mutex_);
    subs_.push_back(sub);
    return sub;
}

void EventHub::unsubscribe(const std::shared_ptr<Subscription>& sub) {
    std::lock_guard lock(mutex_);
    subs_.remove(sub);
}

void EventHub::close_all() {
    std::lock_guard lock(mutex_);
    for (auto& sub : subs_) {
        {
            std::lock_guard sub_lock(sub->mutex_);
            sub->closed_ = true;
        }
        sub->ready_.notify_all();
    }
    subs_.clear();
}

std::size_t EventHub::subscribers() const {
    std::lock_guard lock(mutex_);
    return subs_.size();
}

std::uint64_t EventHub::last_seq() const {
    std::lock_guard lock(mutex_);
    return seq_;
}

}  // namespace brickpad::service
