#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "brickpad/protocol/types.hpp"
#include "brickpad/transport/channel.hpp"
#include "brickpad/transport/endpoint.hpp"
#include "brickpad/transport/frame.hpp"

namespace brickpad::transport {

/// A framed telegram link. One concurrent sender and one concurrent receiver.
class Link {
public:
    virtual ~Link() = default;

    virtual void send_frame(std::span<const std::uint8_t> telegram) = 0;
    /// Throws LinkError(RecvTimeout | LinkClosed | FramingError).
    virtual Bytes recv_frame(std::chrono::milliseconds timeout) = 0;
    virtual void close() noexcept = 0;
    virtual bool is_open() const noexcept = 0;
};

class FramedLink final : public Link {
public:
    explicit FramedLink(std::unique_ptr<ByteChannel> channel);
    ~FramedLink() override;

    void send_frame(std::span<const std::uint8_t> telegram) override;
    Bytes recv_frame(std::chrono::milliseconds timeout) override;
    void close() noexcept override;
    bool is_open() const noexcept override;

private:
    void fail_closed();

    std::unique_ptr<ByteChannel> channel_;
    std::mutex send_mutex_;
    std::mutex recv_mutex_;
    FrameDecoder decoder_;
    std::atomic<bool> closed_{false};
};

/// Records every telegram crossing a link, in order, for assertions and logs.
class TapLog {
public:
    enum class Direction { Sent, Received, Closed };

    struct Entry {
        Direction direction;
        Bytes telegram;
    };

    void record(Direction direction, std::span<const std::uint8_t> telegram);
    std::vector<Entry> entries() const;
    std::vector<Bytes> sent() const;
    void clear();

private:
    mutable std::mutex mutex_;
    std::vector<Entry> entries_;
};

class TapLink final : public Link {
public:
    TapLink(std::unique_ptr<Link> inner, std::shared_ptr<TapLog> log);

    void send_frame(std::span<const std::uint8_t> telegram) override;
    Bytes recv_frame(std::chrono::milliseconds timeout) override;
    void close() noexcept override;
    bool is_open() const noexcept override;

private:
    std::unique_ptr<Link> inner_;
    std::shared_ptr<TapLog> log_;
    std::once_flag closed_once_;
};

struct SerialOptions {
    unsigned baud = 115200;
    bool hardware_flow_control = false;
};

struct OpenOptions {
    /// Produces the channel for `emu:`; without it `emu:` fails with NoSuchDevice.
    std::function<std::unique_ptr<ByteChannel>()> loopback;
    SerialOptions serial;
};

/// Throws LinkError(ConnectTimeout | NoSuchDevice | Refused | IoError).
std::unique_ptr<Link> open_link(const LinkEndpoint& endpoint, std::chrono::milliseconds timeout,
                                const OpenOptions& options = {});

}  // namespace brickpad::transport
