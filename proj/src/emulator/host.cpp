#include "brickpad/emulator/host.hpp"

#include <condition_variable>
#include <deque>
#include <mutex>

#include "brickpad/transport/errors.hpp"
#include "brickpad/transport/frame.hpp"

namespace brickpad::emulator {

namespace {

constexpr std::size_t kEventLogCapacity = 8192;

struct LoopState {
    std::mutex mutex;
    std::condition_variable readable;
    std::deque<std::uint8_t> inbound;
    bool closed = false;
};

}  // namespace

struct EmulatorHost::Core {
    mutable std::mutex mutex;
    VirtualBrick brick;
    std::deque<BrickEvent> log;
    EventSink sink;
    std::vector<std::weak_ptr<LoopState>> loops;

    explicit Core(BrickConfig config) : brick(config) {}

    void record(BrickEvent e) {
        if (sink) sink(e);
        log.push_back(std::move(e));
        if (log.size() > kEventLogCapacity) log.pop_front();
    }

    void record_all(std::vector<BrickEvent> events) {
        for (auto& e : events) record(std::move(e));
    }

    // caller holds mutex
    void close_loops(const std::string& reason) {
        std::size_t closed = 0;
        for (auto& weak : loops) {
            if (auto loop = weak.lock()) {
                bool was_open;
                {
                    std::lock_guard lock(loop->mutex);
                    was_open = !loop->closed;
                    loop->closed = true;
                }
                loop->readable.notify_all();
                if (was_open) ++closed;
            }
        }
        loops.clear();
        if (closed > 0) {
            record(BrickEvent{brick.clock_ms(), "link_closed", {{"reason", reason}}});
        }
    }

    void step(std::uint32_t dt) {
        std::lock_guard lock(mutex);
        auto events = brick.step(dt);
        bool slept = false;
        for (const auto& e : events) slept |= e.event == "BrickSlept";
        record_all(std::move(events));
        if (slept) close_loops("sleep");
    }
};

namespace {

class LoopbackChannel final : public transport::ByteChannel {
public:
    LoopbackChannel(std::weak_ptr<EmulatorHost::Core> core, std::shared_ptr<LoopState> loop)
        : core_(std::move(core)), loop_(std::move(loop)) {}

    ~LoopbackChannel() override { close(); }

    void write_all(std::span<const std::uint8_t> bytes) override {
        std::lock_guard write_lock(write_mutex_);
        auto core = core_.lock();
        if (!core || !is_open()) {
            throw transport::LinkError(transport::LinkErrc::LinkClosed, "emulator link closed");
        }
        decoder_.feed(bytes);
        for (;;) {
            std::optional<Bytes> frame;
            try {
                frame = decoder_.next();
            } catch (const transport::LinkError&) {
                {
                    std::lock_guard lock(core->mutex);
                    core->record(BrickEvent{core->brick.clock_ms(), "framing_error"});
                }
                close();
                return;
            }
            if (!frame) break;
            std::optional<Bytes> reply;
            {
                std::lock_guard lock(core->mutex);
                reply = core->brick.handle_telegram(*frame);
                core->record_all(core->brick.take_events());
            }
            if (reply) {
                auto wire = transport::encode_frame(*reply);
                {
                    std::lock_guard lock(loop_->mutex);
                    if (loop_->closed) break;
                    loop_->inbound.insert(loop_->inbound.end(), wire.begin(), wire.end());
                }
                loop_->readable.notify_all();
            }
        }
    }

    std::optional<std::size_t> read_some(std::span<std::uint8_t> buffer, std::chrono::milliseconds timeout) override {
        std::unique_lock lock(loop_->mutex);
        if (!loop_->readable.wait_for(lock, timeout, [&] { return !loop_->inbound.empty() || loop_->closed; })) {
            return std::nullopt;
        }
        if (loop_->inbound.empty()) return 0;
        auto n = std::min(buffer.size(), loop_->inbound.size());
        std::copy_n(loop_->inbound.begin(), n, buffer.begin());
        loop_->inbound.erase(loop_->inbound.begin(), loop_->inbound.begin() + static_cast<std::ptrdiff_t>(n));
        return n;
    }

    void close() noexcept override {
        bool was_open;
        {
            std::lock_guard lock(loop_->mutex);
            was_open = !loop_->closed;
            loop_->closed = true;
        }
        loop_->readable.notify_all();
        if (!was_open) return;
        if (auto core = core_.lock()) {
            std::lock_guard lock(core->mutex);
            core->record(BrickEvent{core->brick.clock_ms(), "link_closed", {{"reason", "client"}}});
        }
    }

    bool is_open() const noexcept override {
        std::lock_guard lock(loop_->mutex);
        return !loop_->closed;
    }

private:
    std::weak_ptr<EmulatorHost::Core> core_;
    std::shared_ptr<LoopState> loop_;
    std::mutex write_mutex_;
    transport::FrameDecoder decoder_;
};

}  // namespace

EmulatorHost::EmulatorHost(BrickConfig config) : core_(std::make_shared<Core>(config)) {}

EmulatorHost::~EmulatorHost() {
    stop_realtime();
    std::lock_guard lock(core_->mutex);
    core_->close_loops("shutdown");
}

std::unique_ptr<transport::ByteChannel> EmulatorHost::connect() {
    auto loop = std::make_shared<LoopState>();
    std::lock_guard lock(core_->mutex);
    std::erase_if(core_->loops, [](const auto& w) { return w.expired(); });
    core_->loops.push_back(loop);
    core_->record(BrickEvent{core_->brick.clock_ms(), "link_opened"});
    return std::make_unique<LoopbackChannel>(core_, std::move(loop));
}

void EmulatorHost::advance(Millis dt) {
    if (dt.count() > 0) core_->step(static_cast<std::uint32_t>(dt.count()));
}

void EmulatorHost::start_realtime(Millis cadence) {
    if (realtime_.joinable()) return;
    realtime_ = std::jthread([core = core_, cadence](std::stop_token stop) {
        using clock = std::chrono::steady_clock;
        auto last = clock::now();
        std::chrono::microseconds carry{0};
        while (!stop.stop_requested()) {
            std::this_thread::sleep_for(cadence);
            auto now = clock::now();
            carry += std::chrono::duration_cast<std::chrono::microseconds>(now - last);
            last = now;
            auto whole = std::chrono::duration_cast<Millis>(carry);
            if (whole.count() > 0) {
                carry -= whole;
                core->step(static_cast<std::uint32_t>(whole.count()));
            }
        }
    });
}

void EmulatorHost::stop_realtime() {
    if (realtime_.joinable()) {
        realtime_.request_stop();
        realtime_.join();
    }
}

BrickSnapshot EmulatorHost::snapshot() const {
    std::lock_guard lock(core_->mutex);
    return core_->brick.snapshot();
}

std::vector<BrickEvent> EmulatorHost::events() const {
    std::lock_guard lock(core_->mutex);
    return {core_->log.begin(), core_->log.end()};
}

void EmulatorHost::clear_events() {
    std::lock_guard lock(core_->mutex);
    core_->log.clear();
}

void EmulatorHost::set_event_sink(EventSink sink) {
    std::lock_guard lock(core_->mutex);
    core_->sink = std::move(sink);
}

void EmulatorHost::load_sensor_trace(std::uint8_t port, std::vector<TracePoint> trace) {
    std::lock_guard lock(core_->mutex);
    core_->brick.load_sensor_trace(port, std::move(trace));
}

void EmulatorHost::close_connections(const std::string& reason) {
    std::lock_guard lock(core_->mutex);
    core_->close_loops(reason);
}

std::size_t EmulatorHost::open_connections() const {
    std::lock_guard lock(core_->mutex);
    std::size_t n = 0;
    for (const auto& weak : core_->loops) {
        if (auto loop = weak.lock()) {
            std::lock_guard inner(loop->mutex);
            n += loop->closed ? 0 : 1;
        }
    }
    return n;
}

std::optional<Bytes> EmulatorHost::handle_telegram(std::span<const std::uint8_t> telegram) {
    std::lock_guard lock(core_->mutex);
    auto reply = core_->brick.handle_telegram(telegram);
    core_->record_all(core_->brick.take_events());
    return reply;
}

}  // namespace brickpad::emulator
