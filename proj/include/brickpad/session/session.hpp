#pragma once

#include <array>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>

#include "brickpad/clock.hpp"
#include "brickpad/protocol/codec.hpp"
#include "brickpad/transport/endpoint.hpp"
#include "brickpad/transport/link.hpp"
#include "json.hpp"

namespace brickpad::session {

enum class Phase { Disconnected, Connecting, Connected, Disconnecting };

std::string_view to_string(Phase p) noexcept;

/// Disconnected→Connecting→Connected→Disconnecting→Disconnected, plus
/// Connecting→Disconnected when the connection attempt fails.
bool is_legal_transition(Phase from, Phase to) noexcept;

struct SessionConfig {
    transport::LinkEndpoint endpoint;
    Millis connect_timeout{3000};
    Millis request_timeout{1000};
    /// Extra attempts for idempotent queries; commands are never replayed.
    int query_retries = 2;
    /// 0 disables automatic telemetry polling.
    Millis poll_interval{200};
    bool keepalive = true;
    bool reconnect = false;
    Millis reconnect_initial{500};
    Millis reconnect_max{8000};
    /// Drive keep-alive/poll/reconnect from an internal thread. Virtual-time
    /// tests turn this off and call tick() themselves.
    bool background = true;
    Millis tick_interval{10};
};

/// Applies the keys endpoint, request_timeout_ms, poll_interval_ms,
/// keepalive ("on"/"off" or bool) and reconnect. Unknown keys are ignored.
void apply_config_json(SessionConfig& config, const nlohmann::json& json);
/// Same keys from BRICKPAD_LINK, BRICKPAD_REQUEST_TIMEOUT_MS,
/// BRICKPAD_POLL_INTERVAL_MS, BRICKPAD_KEEPALIVE, BRICKPAD_RECONNECT.
void apply_environment(SessionConfig& config, const std::function<const char*(const char*)>& getenv_fn);

/// Interval between keep-alives for a brick reporting the given sleep limit.
Millis keepalive_interval_for(std::uint32_t sleep_limit_ms) noexcept;

struct MotorTelemetry {
    protocol::OutputState state;
    protocol::OutputCounters counters;
};

struct Telemetry {
    std::array<MotorTelemetry, protocol::kMotorCount> motors{};
    std::uint16_t battery_mv = 0;
    Millis sample_time{0};
    /// Telegrams sent before this sample was requested; commands with a
    /// higher sequence are not reflected in it.
    std::uint64_t sequence = 0;
};

struct SessionState {
    Phase phase = Phase::Disconnected;
    transport::LinkEndpoint endpoint;
    std::uint32_t sleep_limit_ms = 0;
    Millis keepalive_interval{0};
    std::optional<std::string> last_error;
};

enum class SessionErrc {
    NotConnected,
    AlreadyConnected,
    BadEndpoint,
    ConnectTimeout,
    Refused,
    NoSuchDevice,
    HandshakeFailed,
    NotARequest,
    RequestTimeout,
    ProtocolViolation,
    LinkClosed,
    CommandFailed,
};

std::string_view to_string(SessionErrc e) noexcept;

class SessionError : public std::runtime_error {
public:
    SessionError(SessionErrc code, const std::string& detail);
    SessionErrc code() const noexcept { return code_; }

private:
    SessionErrc code_;
};

struct SessionEvent {
    enum class Type { PhaseChanged, Telemetry };
    Type type = Type::PhaseChanged;
    Phase phase = Phase::Disconnected;
    std::optional<Telemetry> telemetry;
    std::string reason;
};

using LinkOpener =
    std::function<std::unique_ptr<transport::Link>(const transport::LinkEndpoint& endpoint, Millis timeout)>;

/// Tickets are served strictly in arrival order.
class FifoMutex {
public:
    void lock();
    void unlock();

private:
    std::mutex mutex_;
    std::condition_variable turn_;
    std::uint64_t next_ticket_ = 0;
    std::uint64_t serving_ = 0;
};

/// One live link to one brick. request/send may be called from any thread;
/// at most one with-reply telegram is in flight at a time.
class Session {
public:
    using Observer = std::function<void(const SessionEvent&)>;

    Session(SessionConfig config, LinkOpener opener, Clock& clock);
    ~Session();
    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;

    void connect();
    void connect(const transport::LinkEndpoint& endpoint);
    protocol::Reply request(const protocol::Telegram& telegram);
    void send(const protocol::Telegram& telegram);
    void disconnect();
    Telemetry poll_telemetry();

    /// Runs whatever keep-alive, polling or reconnect work is due.
    void tick();

    Phase phase() const;
    SessionState state() const;
    std::optional<Telemetry> last_telemetry() const;
    std::uint64_t telegrams_sent() const;
    const SessionConfig& config() const noexcept { return config_; }
    Clock& clock() const noexcept { return clock_; }

    int add_observer(Observer observer);
    void remove_observer(int id);

private:
    std::shared_ptr<transport::Link> connected_link() const;
    void set_phase(Phase next, std::string reason, std::vector<SessionEvent>& out);
    void notify(const std::vector<SessionEvent>& events);
    void teardown(const std::shared_ptr<transport::Link>& link, const std::string& reason);
    void connect_locked();
    bool is_idempotent(const protocol::Telegram& telegram) const;

    SessionConfig config_;
    LinkOpener opener_;
    Clock& clock_;

    std::mutex lifecycle_mutex_;
    mutable std::mutex state_mutex_;
    FifoMutex io_mutex_;
    std::mutex tick_mutex_;

    // guarded by state_mutex_
    Phase phase_ = Phase::Disconnected;
    std::shared_ptr<transport::Link> link_;
    std::uint32_t sleep_limit_ms_ = 0;
    Millis keepalive_interval_{0};
    Millis next_keepalive_{0};
    Millis next_poll_{0};
    bool reconnect_pending_ = false;
    Millis reconnect_backoff_{0};
    Millis next_reconnect_{0};
    std::optional<std::string> last_error_;
    std::optional<Telemetry> telemetry_;
    std::atomic<std::uint64_t> tx_count_{0};

    std::mutex observer_mutex_;
    std::map<int, Observer> observers_;
    int next_observer_id_ = 0;

    std::jthread timer_;
};

}  // namespace brickpad::session
