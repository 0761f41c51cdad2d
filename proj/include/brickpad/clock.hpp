#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace brickpad {

using Millis = std::chrono::milliseconds;

/// Time source for scheduling decisions (keep-alive, polling, schema waits).
class Clock {
public:
    virtual ~Clock() = default;
    virtual Millis now() const = 0;
    virtual void sleep_for(Millis duration) = 0;
};

class SteadyClock final : public Clock {
public:
    Millis now() const override {
        return std::chrono::duration_cast<Millis>(std::chrono::steady_clock::now() - origin_);
    }

    void sleep_for(Millis duration) override { std::this_thread::sleep_for(duration); }

private:
    std::chrono::steady_clock::time_point origin_ = std::chrono::steady_clock::now();
};

/// Virtual time that only moves when someone sleeps on it. Each sleep is cut
/// into slices; after every slice the hooks run in registration order, which
/// is where tests step the emulator and tick the session. Drive it from one
/// thread.
class SimulatedClock final : public Clock {
public:
    using Hook = std::function<void(Millis now, Millis slice)>;

    explicit SimulatedClock(Millis slice = Millis(10)) : slice_(slice) {}

    Millis now() const override { return Millis(now_ms_.load()); }

    void sleep_for(Millis duration) override { advance(duration); }

    void advance(Millis duration) {
        while (duration.count() > 0) {
            auto step = std::min(duration, slice_);
            now_ms_ += step.count();
            duration -= step;
            std::vector<Hook> hooks;
            {
                std::lock_guard lock(mutex_);
                hooks = hooks_;
            }
            for (const auto& hook : hooks) hook(now(), step);
        }
    }

    void add_hook(Hook hook) {
        std::lock_guard lock(mutex_);
        hooks_.push_back(std::move(hook));
    }

private:
    Millis slice_;
    std::atomic<Millis::rep> now_ms_{0};
    std::mutex mutex_;
    std::vector<Hook> hooks_;
};

}  // namespace brickpad
