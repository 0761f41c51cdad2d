#pragma once

// Virtual-time harness shared by the session-level tests: one emulator host,
// one session over a tapped loopback link, one simulated clock whose hooks
// step the brick first and then tick the session.

#include <atomic>
#include <memory>
#include <optional>

#include <spdlog/spdlog.h>

#include "brickpad/clock.hpp"
#include "brickpad/emulator/host.hpp"
#include "brickpad/session/session.hpp"
#include "brickpad/transport/errors.hpp"
#include "brickpad/transport/link.hpp"

namespace brickpad::testing {

/// Passes traffic through untouched until told to misbehave.
class FaultLink final : public transport::Link {
public:
    enum class Fault { None, WrongOpcode, DropReplies };

    explicit FaultLink(std::unique_ptr<transport::Link> inner) : inner_(std::move(inner)) {}

    std::atomic<Fault> fault{Fault::None};

    void send_frame(std::span<const std::uint8_t> telegram) override { inner_->send_frame(telegram); }

    Bytes recv_frame(std::chrono::milliseconds timeout) override {
        switch (fault.load()) {
            case Fault::DropReplies:
                try {
                    inner_->recv_frame(Millis(0));
                } catch (const transport::LinkError&) {
                }
                throw transport::LinkError(transport::LinkErrc::RecvTimeout, "dropped");
            case Fault::WrongOpcode: {
                auto frame = inner_->recv_frame(timeout);
                if (frame.size() >= 2) frame[1] ^= 0x40;
                return frame;
            }
            case Fault::None:
                break;
        }
        return inner_->recv_frame(timeout);
    }

    void close() noexcept override { inner_->close(); }
    bool is_open() const noexcept override { return inner_->is_open(); }

private:
    std::unique_ptr<transport::Link> inner_;
};

// link-loss warnings are expected in nearly every test here
inline const bool quiet_logs = [] {
    spdlog::set_level(spdlog::level::err);
    return true;
}();

inline session::SessionConfig quiet_config() {
    session::SessionConfig config;
    config.endpoint = transport::parse_endpoint("emu:");
    config.background = false;
    config.poll_interval = Millis(0);
    return config;
}

struct Rig {
    explicit Rig(session::SessionConfig config = quiet_config(), emulator::BrickConfig brick = {})
        : host(brick),
          tap(std::make_shared<transport::TapLog>()),
          session(std::move(config), [this](const auto& e, Millis t) { return open(e, t); }, clock) {
        clock.add_hook([this](Millis, Millis slice) {
            host.advance(slice);
            session.tick();
        });
    }

    std::unique_ptr<transport::Link> open(const transport::LinkEndpoint& endpoint, Millis timeout) {
        if (refuse) throw transport::LinkError(transport::LinkErrc::Refused, "refused by rig");
        ++opens;
        transport::OpenOptions options;
        options.loopback = [this] { return host.connect(); };
        auto tapped = std::make_unique<transport::TapLink>(transport::open_link(endpoint, timeout, options), tap);
        auto faulty = std::make_unique<FaultLink>(std::move(tapped));
        fault_link = faulty.get();
        return faulty;
    }

    std::uint64_t now_ms() const { return static_cast<std::uint64_t>(clock.now().count()); }

    SimulatedClock clock;
    emulator::EmulatorHost host;
    std::shared_ptr<transport::TapLog> tap;
    bool refuse = false;
    int opens = 0;
    FaultLink* fault_link = nullptr;
    session::Session session;
};

inline std::optional<std::uint64_t> first_event_time(const emulator::EmulatorHost& host, std::string_view name) {
    for (const auto& e : host.events()) {
        if (e.event == name) return e.t_ms;
    }
    return std::nullopt;
}

}  // namespace brickpad::testing
