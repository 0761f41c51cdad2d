#pragma once

#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "brickpad/emulator/host.hpp"
#include "brickpad/transport/posix.hpp"

namespace brickpad::emulator {

/// Serves an EmulatorHost over TCP so the brick can live in another process.
/// Each accepted socket is bridged onto its own loopback channel.
class EmulatorServer {
public:
    /// Throws LinkError(BindFailed).
    EmulatorServer(EmulatorHost& host, const std::string& bind_host, std::uint16_t port);
    ~EmulatorServer();
    EmulatorServer(const EmulatorServer&) = delete;
    EmulatorServer& operator=(const EmulatorServer&) = delete;

    std::uint16_t port() const noexcept { return listener_.port(); }
    void stop();

private:
    void accept_loop(std::stop_token stop);
    void serve(std::stop_token stop, std::shared_ptr<transport::FdChannel> socket);

    EmulatorHost& host_;
    transport::TcpListener listener_;
    std::mutex mutex_;
    std::list<std::shared_ptr<transport::FdChannel>> sockets_;
    std::list<std::jthread> workers_;
    std::jthread acceptor_;
};

}  // namespace brickpad::emulator
