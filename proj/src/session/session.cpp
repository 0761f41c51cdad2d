#include "brickpad/session/session.hpp"

#include <spdlog/spdlog.h>

#include <charconv>
#include <cstdlib>

#include "brickpad/transport/errors.hpp"

namespace brickpad::session {

using protocol::Opcode;
using transport::LinkErrc;
using transport::LinkError;

std::string_view to_string(Phase p) noexcept {
    switch (p) {
        case Phase::Disconnected:
            return "Disconnected";
        case Phase::Connecting:
            return "Connecting";
        case Phase::Connected:
            return "Connected";
        case Phase::Disconnecting:
            return "Disconnecting";
    }
    return "?";
}

bool is_legal_transition(Phase from, Phase to) noexcept {
    switch (from) {
        case Phase::Disconnected:
            return to == Phase::Connecting;
        case Phase::Connecting:
            return to == Phase::Connected || to == Phase::Disconnected;
        case Phase::Connected:
            return to == Phase::Disconnecting;
        case Phase::Disconnecting:
            return to == Phase::Disconnected;
    }
    return false;
}

std::string_view to_string(SessionErrc e) noexcept {
    switch (e) {
        case SessionErrc::NotConnected:
            return "NotConnected";
        case SessionErrc::AlreadyConnected:
            return "AlreadyConnected";
        case SessionErrc::BadEndpoint:
            return "BadEndpoint";
        case SessionErrc::ConnectTimeout:
            return "ConnectTimeout";
        case SessionErrc::Refused:
            return "Refused";
        case SessionErrc::NoSuchDevice:
            return "NoSuchDevice";
        case SessionErrc::HandshakeFailed:
            return "HandshakeFailed";
        case SessionErrc::NotARequest:
            return "NotARequest";
        case SessionErrc::RequestTimeout:
            return "RequestTimeout";
        case SessionErrc::ProtocolViolation:
            return "ProtocolViolation";
        case SessionErrc::LinkClosed:
            return "LinkClosed";
        case SessionErrc::CommandFailed:
            return "CommandFailed";
    }
    return "?";
}

SessionError::SessionError(SessionErrc code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

Millis keepalive_interval_for(std::uint32_t sleep_limit_ms) noexcept {
    if (sleep_limit_ms == 0) return Millis(30000);
    return std::max(Millis(1000), Millis(sleep_limit_ms / 2));
}

namespace {

bool parse_switch(const std::string& text, const char* key) {
    if (text == "on" || text == "true" || text == "1" || text == "yes") return true;
    if (text == "off" || text == "false" || text == "0" || text == "no") return false;
    throw std::invalid_argument(std::string(key) + ": expected on/off, got '" + text + "'");
}

bool json_switch(const nlohmann::json& v, const char* key) {
    if (v.is_boolean()) return v.get<bool>();
    if (v.is_string()) return parse_switch(v.get<std::string>(), key);
    throw std::invalid_argument(std::string(key) + ": expected on/off");
}

Millis parse_millis(const std::string& text, const char* key) {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size() || v < 0) {
        throw std::invalid_argument(std::string(key) + ": expected a non-negative integer");
    }
    return Millis(v);
}

Millis json_millis(const nlohmann::json& v, const char* key) {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw std::invalid_argument(std::string(key) + ": expected a non-negative integer");
    }
    return Millis(v.get<long long>());
}

SessionErrc from_link(LinkErrc e) {
    switch (e) {
        case LinkErrc::ConnectTimeout:
            return SessionErrc::ConnectTimeout;
        case LinkErrc::Refused:
            return SessionErrc::Refused;
        case LinkErrc::NoSuchDevice:
            return SessionErrc::NoSuchDevice;
        case LinkErrc::BadEndpoint:
            return SessionErrc::BadEndpoint;
        case LinkErrc::RecvTimeout:
            return SessionErrc::RequestTimeout;
        default:
            return SessionErrc::LinkClosed;
    }
}

}  // namespace

void apply_config_json(SessionConfig& config, const nlohmann::json& json) {
    if (!json.is_object()) throw std::invalid_argument("config must be a JSON object");
    if (auto it = json.find("endpoint"); it != json.end()) {
        config.endpoint = transport::parse_endpoint(it->get<std::string>());
    }
    if (auto it = json.find("request_timeout_ms"); it != json.end()) {
        config.request_timeout = json_millis(*it, "request_timeout_ms");
    }
    if (auto it = json.find("poll_interval_ms"); it != json.end()) {
        config.poll_interval = json_millis(*it, "poll_interval_ms");
    }
    if (auto it = json.find("keepalive"); it != json.end()) config.keepalive = json_switch(*it, "keepalive");
    if (auto it = json.find("reconnect"); it != json.end()) config.reconnect = json_switch(*it, "reconnect");
}

void apply_environment(SessionConfig& config, const std::function<const char*(const char*)>& getenv_fn) {
    if (const char* v = getenv_fn("BRICKPAD_LINK"); v && *v) config.endpoint = transport::parse_endpoint(v);
    if (const char* v = getenv_fn("BRICKPAD_REQUEST_TIMEOUT_MS"); v && *v) {
        config.request_timeout = parse_millis(v, "BRICKPAD_REQUEST_TIMEOUT_MS");
    }
    if (const char* v = getenv_fn("BRICKPAD_POLL_INTERVAL_MS"); v && *v) {
        config.poll_interval = parse_millis(v, "BRICKPAD_POLL_INTERVAL_MS");
    }
    if (const char* v = getenv_fn("BRICKPAD_KEEPALIVE"); v && *v) config.keepalive = parse_switch(v, "BRICKPAD_KEEPALIVE");
    if (const char* v = getenv_fn("BRICKPAD_RECONNECT"); v && *v) config.reconnect = parse_switch(v, "BRICKPAD_RECONNECT");
}

void FifoMutex::lock() {
    std::unique_lock lock(mutex_);
    const auto ticket = next_ticket_++;
    turn_.wait(lock, [&] { return serving_ == ticket; });
}

void FifoMutex::unlock() {
    {
        std::lock_guard lock(mutex_);
        ++serving_;
    }
    turn_.notify_all();
}

Session::Session(SessionConfig config, LinkOpener opener, Clock& clock)
    : config_(std::move(config)), opener_(std::move(opener)), clock_(clock) {
    if (config_.background) {
        timer_ = std::jthread([this](std::stop_token stop) {
            std::mutex m;
            std::condition_variable_any cv;
            while (!stop.stop_requested()) {
                {
                    std::unique_lock lock(m);
                    cv.wait_for(lock, stop, config_.tick_interval, [] { return false; });
                }
                if (stop.stop_requested()) break;
                tick();
            }
        });
    }
}

Session::~Session() {
    if (timer_.joinable()) {
        timer_.request_stop();
        timer_.join();
    }
    disconnect();
}

void Session::set_phase(Phase next, std::string reason, std::vector<SessionEvent>& out) {
    if (!is_legal_transition(phase_, next)) {
        throw std::logic_error("illegal session transition " + std::string(to_string(phase_)) + " -> " +
                               std::string(to_string(next)));
    }
    phase_ = next;
    out.push_back(SessionEvent{SessionEvent::Type::PhaseChanged, next, std::nullopt, std::move(reason)});
}

void Session::notify(const std::vector<SessionEvent>& events) {
    if (events.empty()) return;
    std::vector<Observer> observers;
    {
        std::lock_guard lock(observer_mutex_);
        for (const auto& [id, o] : observers_) observers.push_back(o);
    }
    for (const auto& e : events) {
        for (const auto& o : observers) o(e);
    }
}

int Session::add_observer(Observer observer) {
    std::lock_guard lock(observer_mutex_);
    int id = next_observer_id_++;
    observers_.emplace(id, std::move(observer));
    return id;
}

void Session::remove_observer(int id) {
    std::lock_guard lock(observer_mutex_);
    observers_.erase(id);
}

void Session::connect() {
    std::lock_guard lifecycle(lifecycle_mutex_);
    connect_locked();
}

void Session::connect(const transport::LinkEndpoint& endpoint) {
    std::lock_guard lifecycle(lifecycle_mutex_);
    {
        std::lock_guard lock(state_mutex_);
        if (phase_ != Phase::Disconnected) {
            throw SessionError(SessionErrc::AlreadyConnected, "phase " + std::string(to_string(phase_)));
        }
        config_.endpoint = endpoint;
    }
    connect_locked();
}

void Session::connect_locked() {
    std::vector<SessionEvent> events;
    transport::LinkEndpoint endpoint;
    {
        std::lock_guard lock(state_mutex_);
        if (phase_ != Phase::Disconnected) {
            throw SessionError(SessionErrc::AlreadyConnected, "phase " + std::string(to_string(phase_)));
        }
        reconnect_pending_ = false;
        endpoint = config_.endpoint;
        set_phase(Phase::Connecting, endpoint.to_string(), events);
    }
    notify(events);
    events.clear();

    auto fail = [&](SessionErrc code, const std::string& detail) {
        std::vector<SessionEvent> failed;
        {
            std::lock_guard lock(state_mutex_);
            last_error_ = std::string(to_string(code)) + ": " + detail;
            set_phase(Phase::Disconnected, *last_error_, failed);
        }
        notify(failed);
        return SessionError(code, detail);
    };

    std::shared_ptr<transport::Link> link;
    try {
        link = opener_(endpoint, config_.connect_timeout);
    } catch (const LinkError& e) {
        throw fail(from_link(e.code()), e.what());
    }

    std::uint32_t sleep_limit = 0;
    try {
        link->send_frame(protocol::encode_keep_alive(true).serialize());
        ++tx_count_;
        auto reply = protocol::decode_reply(link->recv_frame(config_.request_timeout), Opcode::KeepAlive);
        if (!reply.ok()) {
            throw SessionError(SessionErrc::HandshakeFailed,
                               "keep-alive status " + std::string(protocol::to_string(reply.status)));
        }
        sleep_limit = protocol::decode_keep_alive_reply(reply.payload);
    } catch (const std::exception& e) {
        link->close();
        throw fail(SessionErrc::HandshakeFailed, e.what());
    }

    {
        std::lock_guard lock(state_mutex_);
        link_ = link;
        sleep_limit_ms_ = sleep_limit;
        keepalive_interval_ = keepalive_interval_for(sleep_limit);
        const auto now = clock_.now();
        next_keepalive_ = now + keepalive_interval_;
        next_poll_ = now + config_.poll_interval;
        reconnect_backoff_ = config_.reconnect_initial;
        last_error_.reset();
        set_phase(Phase::Connected, endpoint.to_string(), events);
    }
    notify(events);
    spdlog::debug("connected to {} (sleep limit {} ms)", endpoint.to_string(), sleep_limit);
}

std::shared_ptr<transport::Link> Session::connected_link() const {
    std::lock_guard lock(state_mutex_);
    if (phase_ != Phase::Connected || !link_) {
        throw SessionError(SessionErrc::NotConnected, "phase " + std::string(to_string(phase_)));
    }
    return link_;
}

bool Session::is_idempotent(const protocol::Telegram& t) const {
    switch (static_cast<Opcode>(t.opcode)) {
        case Opcode::GetOutputState:
        case Opcode::GetInputValues:
        case Opcode::GetBatteryLevel:
        case Opcode::KeepAlive:
            return true;
        case Opcode::MessageRead:
            return t.payload.size() == 3 && t.payload[2] == 0;
        default:
            return false;
    }
}

protocol::Reply Session::request(const protocol::Telegram& telegram) {
    if (!telegram.wants_reply()) {
        throw SessionError(SessionErrc::NotARequest, "telegram does not ask for a reply");
    }
    auto link = connected_link();
    const auto wire = telegram.serialize();
    const int attempts = is_idempotent(telegram) ? 1 + std::max(config_.query_retries, 0) : 1;

    // teardown notifies observers, so it always runs after the io lock is released
    std::unique_lock io(io_mutex_);
    for (int attempt = 1;; ++attempt) {
        Bytes frame;
        try {
            link->send_frame(wire);
            ++tx_count_;
            frame = link->recv_frame(config_.request_timeout);
        } catch (const LinkError& e) {
            if (e.code() == LinkErrc::RecvTimeout) {
                if (attempt < attempts) {
                    // a late reply to the timed-out attempt must not answer the retry
                    try {
                        for (;;) link->recv_frame(Millis(0));
                    } catch (const LinkError&) {
                    }
                    continue;
                }
                throw SessionError(SessionErrc::RequestTimeout, e.what());
            }
            if (e.code() == LinkErrc::OversizeTelegram || e.code() == LinkErrc::EmptyTelegram) {
                throw SessionError(SessionErrc::NotARequest, e.what());
            }
            io.unlock();
            teardown(link, e.what());
            throw SessionError(SessionErrc::LinkClosed, e.what());
        }
        try {
            return protocol::decode_reply(frame, telegram.opcode);
        } catch (const protocol::CodecError& e) {
            io.unlock();
            teardown(link, std::string("protocol violation: ") + e.what());
            throw SessionError(SessionErrc::ProtocolViolation, e.what());
        }
    }
}

void Session::send(const protocol::Telegram& telegram) {
    auto link = connected_link();
    const auto wire = telegram.serialize();
    std::unique_lock io(io_mutex_);
    try {
        link->send_frame(wire);
        ++tx_count_;
    } catch (const LinkError& e) {
        if (e.code() == LinkErrc::OversizeTelegram || e.code() == LinkErrc::EmptyTelegram) {
            throw SessionError(SessionErrc::NotARequest, e.what());
        }
        io.unlock();
        teardown(link, e.what());
        throw SessionError(SessionErrc::LinkClosed, e.what());
    }
}

void Session::teardown(const std::shared_ptr<transport::Link>& link, const std::string& reason) {
    std::vector<SessionEvent> events;
    {
        std::lock_guard lock(state_mutex_);
        if (link_ != link || phase_ != Phase::Connected) return;
        set_phase(Phase::Disconnecting, reason, events);
        link->close();
        link_.reset();
        last_error_ = reason;
        set_phase(Phase::Disconnected, reason, events);
        if (config_.reconnect) {
            reconnect_pending_ = true;
            next_reconnect_ = clock_.now() + reconnect_backoff_;
        }
    }
    spdlog::warn("link lost: {}", reason);
    notify(events);
}

void Session::disconnect() {
    std::lock_guard lifecycle(lifecycle_mutex_);
    std::vector<SessionEvent> events;
    std::shared_ptr<transport::Link> link;
    {
        std::lock_guard lock(state_mutex_);
        reconnect_pending_ = false;
        if (phase_ != Phase::Connected) return;
        set_phase(Phase::Disconnecting, "user request", events);
        link = link_;
    }
    notify(events);
    events.clear();

    {
        std::lock_guard io(io_mutex_);
        for (std::uint8_t port = 0; port < protocol::kMotorCount; ++port) {
            try {
                link->send_frame(protocol::coast_image(port).serialize());
                ++tx_count_;
            } catch (const std::exception& e) {
                spdlog::warn("coast on port {} during disconnect failed: {}", port, e.what());
            }
        }
        link->close();
    }

    {
        std::lock_guard lock(state_mutex_);
        link_.reset();
        set_phase(Phase::Disconnected, "user request", events);
    }
    notify(events);
}

Telemetry Session::poll_telemetry() {
    Telemetry t;
    t.sequence = tx_count_;
    for (std::uint8_t port = 0; port < protocol::kMotorCount; ++port) {
        auto reply = request(protocol::encode_get_output_state(port));
        if (!reply.ok()) {
            throw SessionError(SessionErrc::CommandFailed,
                               "GetOutputState status " + std::string(protocol::to_string(reply.status)));
        }
        auto reading = protocol::decode_output_state_reply(reply.payload);
        t.motors[port] = MotorTelemetry{reading.state, reading.counters};
    }
    auto battery = request(protocol::encode_get_battery_level());
    if (!battery.ok()) {
        throw SessionError(SessionErrc::CommandFailed,
                           "GetBatteryLevel status " + std::string(protocol::to_string(battery.status)));
    }
    t.battery_mv = protocol::decode_battery_reply(battery.payload);

    {
        std::lock_guard lock(state_mutex_);
        t.sample_time = clock_.now();
        if (telemetry_ && t.sample_time < telemetry_->sample_time) t.sample_time = telemetry_->sample_time;
        telemetry_ = t;
    }
    notify({SessionEvent{SessionEvent::Type::Telemetry, Phase::Connected, t, {}}});
    return t;
}

void Session::tick() {
    std::unique_lock tick_lock(tick_mutex_, std::try_to_lock);
    if (!tick_lock.owns_lock()) return;

    const auto now = clock_.now();
    bool keepalive_due = false;
    bool poll_due = false;
    bool reconnect_due = false;
    std::shared_ptr<transport::Link> link;
    {
        std::lock_guard lock(state_mutex_);
        if (phase_ == Phase::Connected) {
            link = link_;
            if (config_.keepalive && now >= next_keepalive_) {
                keepalive_due = true;
                next_keepalive_ = now + keepalive_interval_;
            }
            if (config_.poll_interval.count() > 0 && now >= next_poll_) {
                poll_due = true;
                next_poll_ = now + config_.poll_interval;
            }
        } else if (phase_ == Phase::Disconnected && reconnect_pending_ && now >= next_reconnect_) {
            reconnect_due = true;
        }
    }

    if (link && !link->is_open()) {
        teardown(link, "link closed by peer");
        return;
    }
    if (keepalive_due) {
        try {
            request(protocol::encode_keep_alive(true));
        } catch (const SessionError& e) {
            spdlog::warn("keep-alive failed: {}", e.what());
            if (e.code() == SessionErrc::RequestTimeout) teardown(link, e.what());
        }
    }
    if (poll_due) {
        try {
            poll_telemetry();
        } catch (const std::exception& e) {
            spdlog::warn("telemetry poll failed: {}", e.what());
        }
    }
    if (reconnect_due) {
        std::unique_lock lifecycle(lifecycle_mutex_, std::try_to_lock);
        if (!lifecycle.owns_lock()) return;
        try {
            connect_locked();
        } catch (const SessionError& e) {
            std::lock_guard lock(state_mutex_);
            reconnect_pending_ = true;
            reconnect_backoff_ = std::min(reconnect_backoff_ * 2, config_.reconnect_max);
            next_reconnect_ = clock_.now() + reconnect_backoff_;
            spdlog::info("reconnect failed ({}); next attempt in {} ms", e.what(), reconnect_backoff_.count());
        }
    }
}

Phase Session::phase() const {
    std::lock_guard lock(state_mutex_);
    return phase_;
}

SessionState Session::state() const {
    std::lock_guard lock(state_mutex_);
    return SessionState{phase_, config_.endpoint, sleep_limit_ms_, keepalive_interval_, last_error_};
}

std::optional<Telemetry> Session::last_telemetry() const {
    std::lock_guard lock(state_mutex_);
    return telemetry_;
}

std::uint64_t Session::telegrams_sent() const { return tx_count_; }

}  // namespace brickpad::session
