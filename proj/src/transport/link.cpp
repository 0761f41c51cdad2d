#include "brickpad/transport/link.hpp"

#include <array>

#include "brickpad/transport/errors.hpp"
#include "brickpad/transport/posix.hpp"

namespace brickpad::transport {

FramedLink::FramedLink(std::unique_ptr<ByteChannel> channel) : channel_(std::move(channel)) {}

FramedLink::~FramedLink() { close(); }

void FramedLink::send_frame(std::span<const std::uint8_t> telegram) {
    auto wire = encode_frame(telegram);
    std::lock_guard lock(send_mutex_);
    if (closed_) {
        throw LinkError(LinkErrc::LinkClosed, "send on closed link");
    }
    try {
        channel_->write_all(wire);
    } catch (const LinkError&) {
        closed_ = true;
        throw;
    }
}

Bytes FramedLink::recv_frame(std::chrono::milliseconds timeout) {
    using clock = std::chrono::steady_clock;
    std::lock_guard lock(recv_mutex_);
    if (closed_) {
        throw LinkError(LinkErrc::LinkClosed, "receive on closed link");
    }
    const auto deadline = clock::now() + timeout;
    std::array<std::uint8_t, 256> buffer{};
    for (;;) {
        try {
            if (auto frame = decoder_.next()) {
                return std::move(*frame);
            }
        } catch (const LinkError&) {
            fail_closed();
            throw;
        }
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now());
        if (left.count() < 0) left = std::chrono::milliseconds(0);
        auto n = channel_->read_some(buffer, left);
        if (!n) {
            if (clock::now() >= deadline) {
                throw LinkError(LinkErrc::RecvTimeout, "no frame within " + std::to_string(timeout.count()) + " ms");
            }
            continue;
        }
        if (*n == 0) {
            bool partial = decoder_.mid_frame();
            fail_closed();
            if (partial) {
                throw LinkError(LinkErrc::FramingError, "stream ended mid-frame");
            }
            throw LinkError(LinkErrc::LinkClosed, "peer closed the link");
        }
        decoder_.feed(std::span(buffer.data(), *n));
    }
}

void FramedLink::fail_closed() {
    closed_ = true;
    channel_->close();
}

void FramedLink::close() noexcept {
    closed_ = true;
    if (channel_) channel_->close();
}

bool FramedLink::is_open() const noexcept { return !closed_ && channel_->is_open(); }

void TapLog::record(Direction direction, std::span<const std::uint8_t> telegram) {
    std::lock_guard lock(mutex_);
    entries_.push_back(Entry{direction, Bytes(telegram.begin(), telegram.end())});
}

std::vector<TapLog::Entry> TapLog::entries() const {
    std::lock_guard lock(mutex_);
    return entries_;
}

std::vector<Bytes> TapLog::sent() const {
    std::lock_guard lock(mutex_);
    std::vector<Bytes> out;
    for (const auto& e : entries_) {
        if (e.direction == Direction::Sent) out.push_back(e.telegram);
    }
    return out;
}

void TapLog::clear() {
    std::lock_guard lock(mutex_);
    entries_.clear();
}

TapLink::TapLink(std::unique_ptr<Link> inner, std::shared_ptr<TapLog> log)
    : inner_(std::move(inner)), log_(std::move(log)) {}

void TapLink::send_frame(std::span<const std::uint8_t> telegram) {
    inner_->send_frame(telegram);
    log_->record(TapLog::Direction::Sent, telegram);
}

Bytes TapLink::recv_frame(std::chrono::milliseconds timeout) {
    auto frame = inner_->recv_frame(timeout);
    log_->record(TapLog::Direction::Received, frame);
    return frame;
}

void TapLink::close() noexcept {
    inner_->close();
    std::call_once(closed_once_, [this] { log_->record(TapLog::Direction::Closed, {}); });
}

bool TapLink::is_open() const noexcept { return inner_->is_open(); }

std::unique_ptr<Link> open_link(const LinkEndpoint& endpoint, std::chrono::milliseconds timeout,
                                const OpenOptions& options) {
    std::unique_ptr<ByteChannel> channel;
    switch (endpoint.scheme) {
        case Scheme::Emulator:
            if (!options.loopback) {
                throw LinkError(LinkErrc::NoSuchDevice, "no in-process emulator available");
            }
            channel = options.loopback();
            break;
        case Scheme::Tcp:
            channel = connect_tcp(endpoint.host, endpoint.port, timeout);
            break;
        case Scheme::Serial:
            channel = open_serial(endpoint.device, options.serial);
            break;
    }
    return std::make_unique<FramedLink>(std::move(channel));
}

}  // namespace brickpad::transport
