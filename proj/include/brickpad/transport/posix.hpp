#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "brickpad/transport/channel.hpp"
#include "brickpad/transport/link.hpp"

namespace brickpad::transport {

/// Owns a socket or tty descriptor.
class FdChannel final : public ByteChannel {
public:
    FdChannel(int fd, bool is_socket);
    ~FdChannel() override;
    FdChannel(const FdChannel&) = delete;
    FdChannel& operator=(const FdChannel&) = delete;

    void write_all(std::span<const std::uint8_t> bytes) override;
    std::optional<std::size_t> read_some(std::span<std::uint8_t> buffer,
                                         std::chrono::milliseconds timeout) override;
    void close() noexcept override;
    bool is_open() const noexcept override;

    int fd() const noexcept { return fd_; }

private:
    int fd_;
    bool is_socket_;
    std::atomic<bool> open_{true};
};

std::unique_ptr<FdChannel> connect_tcp(const std::string& host, std::uint16_t port,
                                       std::chrono::milliseconds timeout);

std::unique_ptr<FdChannel> open_serial(const std::string& device, const SerialOptions& options);

class TcpListener {
public:
    /// port 0 picks an ephemeral port. Throws LinkError(BindFailed).
    TcpListener(const std::string& host, std::uint16_t port);
    ~TcpListener();
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    std::uint16_t port() const noexcept { return port_; }

    /// nullptr on timeout or after close().
    std::unique_ptr<FdChannel> accept(std::chrono::milliseconds timeout);
    void close() noexcept;

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> open_{true};
};

}  // namespace brickpad::transport
