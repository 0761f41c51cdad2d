#include "brickpad/emulator/server.hpp"

#include <array>

#include "brickpad/transport/errors.hpp"

namespace brickpad::emulator {

using namespace std::chrono_literals;

EmulatorServer::EmulatorServer(EmulatorHost& host, const std::string& bind_host, std::uint16_t port)
    : host_(host), listener_(bind_host, port) {
    acceptor_ = std::jthread([this](std::stop_token stop) { accept_loop(stop); });
}

EmulatorServer::~EmulatorServer() { stop(); }

void EmulatorServer::stop() {
    listener_.close();
    if (acceptor_.joinable()) {
        acceptor_.request_stop();
        acceptor_.join();
    }
    std::list<std::jthread> workers;
    {
        std::lock_guard lock(mutex_);
        for (auto& s : sockets_) s->close();
        workers.swap(workers_);
    }
    for (auto& w : workers) {
        w.request_stop();
        if (w.joinable()) w.join();
    }
}

void EmulatorServer::accept_loop(std::stop_token stop) {
    while (!stop.stop_requested()) {
        auto accepted = listener_.accept(100ms);
        if (!accepted) continue;
        std::shared_ptr<transport::FdChannel> socket(std::move(accepted));
        std::lock_guard lock(mutex_);
        sockets_.remove_if([](const auto& s) { return !s->is_open(); });
        sockets_.push_back(socket);
        workers_.emplace_back([this, socket](std::stop_token s) { serve(s, socket); });
    }
}

void EmulatorServer::serve(std::stop_token stop, std::shared_ptr<transport::FdChannel> socket) {
    auto brick_side = host_.connect();
    std::array<std::uint8_t, 512> buffer{};
    try {
        while (!stop.stop_requested() && socket->is_open()) {
            auto n = socket->read_some(buffer, 20ms);
            if (n && *n == 0) break;
            if (n) brick_side->write_all(std::span(buffer.data(), *n));

            // replies are produced synchronously by write_all
            for (;;) {
                auto r = brick_side->read_some(buffer, 0ms);
                if (!r || *r == 0) break;
                socket->write_all(std::span(buffer.data(), *r));
            }
            if (!brick_side->is_open()) break;
        }
    } catch (const transport::LinkError&) {
        // peer vanished or brick closed the link mid-write
    }
    brick_side->close();
    socket->close();
}

}  // namespace brickpad::emulator
