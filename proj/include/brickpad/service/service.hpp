#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>

#include "brickpad/service/events.hpp"
#include "brickpad/session/session.hpp"
#include "json.hpp"

namespace brickpad::service {

struct ServiceOptions {
    /// Adds permissive CORS headers so a pad served from another origin can call in.
    bool cors = false;
    /// Serves these files at / when set (the built pad).
    std::string static_dir;
    std::array<std::string, protocol::kMotorCount> labels{"Rotate", "Lift", "Claw"};
    int default_power = 75;
    bool brake_on_stop = true;
    std::size_t event_capacity = 256;
    std::size_t worker_threads = 32;
};

/// HTTP + server-sent-event front end for one session. The session is owned
/// by the caller and keeps running whether or not any client is attached.
class Service {
public:
    Service(session::Session& session, ServiceOptions options = {});
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds and starts serving on a background thread. Port 0 picks a free
    /// port. Returns the bound port; throws std::runtime_error on bind failure.
    int start(const std::string& host, int port);
    void stop();

    EventHub& events() noexcept;
    /// Same document as GET /api/status.
    nlohmann::json status() const;

    struct Impl;

private:
    std::unique_ptr<Impl> impl_;
};

/// "127.0.0.1:8080" or ":8080" or "8080".
std::pair<std::string, int> parse_bind_address(const std::string& text);

}  // namespace brickpad::service
