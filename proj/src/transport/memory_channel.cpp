#include <algorithm>
#include <condition_variable>
#include <deque>
#include <mutex>

#include "brickpad/transport/channel.hpp"
#include "brickpad/transport/errors.hpp"

namespace brickpad::transport {

namespace {

struct PipeState {
    std::mutex mutex;
    std::condition_variable readable;
    std::deque<std::uint8_t> lanes[2];
    bool closed = false;
};

class MemoryChannel final : public ByteChannel {
public:
    MemoryChannel(std::shared_ptr<PipeState> state, int side, std::size_t chunk)
        : state_(std::move(state)), side_(side), chunk_(std::max<std::size_t>(chunk, 1)) {}

    ~MemoryChannel() override { close(); }

    void write_all(std::span<const std::uint8_t> bytes) override {
        {
            std::lock_guard lock(state_->mutex);
            if (state_->closed) {
                throw LinkError(LinkErrc::LinkClosed, "memory pipe closed");
            }
            auto& lane = state_->lanes[1 - side_];
            lane.insert(lane.end(), bytes.begin(), bytes.end());
        }
        state_->readable.notify_all();
    }

    std::optional<std::size_t> read_some(std::span<std::uint8_t> buffer,
                                         std::chrono::milliseconds timeout) override {
        std::unique_lock lock(state_->mutex);
        auto& lane = state_->lanes[side_];
        if (!state_->readable.wait_for(lock, timeout, [&] { return !lane.empty() || state_->closed; })) {
            return std::nullopt;
        }
        if (lane.empty()) {
            return 0;
        }
        auto n = std::min({buffer.size(), lane.size(), chunk_});
        std::copy_n(lane.begin(), n, buffer.begin());
        lane.erase(lane.begin(), lane.begin() + static_cast<std::ptrdiff_t>(n));
        return n;
    }

    void close() noexcept override {
        {
            std::lock_guard lock(state_->mutex);
            state_->closed = true;
        }
        state_->readable.notify_all();
    }

    bool is_open() const noexcept override {
        std::lock_guard lock(state_->mutex);
        return !state_->closed;
    }

private:
    std::shared_ptr<PipeState> state_;
    int side_;
    std::size_t chunk_;
};

}  // namespace

std::pair<std::unique_ptr<ByteChannel>, std::unique_ptr<ByteChannel>> make_memory_pipe(std::size_t chunk) {
    auto state = std::make_shared<PipeState>();
    return {std::make_unique<MemoryChannel>(state, 0, chunk), std::make_unique<MemoryChannel>(state, 1, chunk)};
}

}  // namespace brickpad::transport
