#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "brickpad/protocol/codec.hpp"
#include "json.hpp"

namespace brickpad::emulator {

struct BrickConfig {
    /// Steady-state speed per unit of power; 9.0 puts power 100 at 900 deg/s.
    double degrees_per_second_per_power = 9.0;
    double coast_time_constant_s = 0.3;
    double coast_cutoff_deg_per_s = 5.0;
    std::uint16_t battery_mv = 7400;
    /// 0 disables the sleep timer.
    std::uint32_t sleep_limit_ms = 600000;
    std::size_t mailbox_capacity = 5;
    std::uint32_t max_subtick_ms = 10;
};

struct TracePoint {
    std::uint32_t time_ms = 0;
    std::uint16_t raw = 0;
    std::int16_t scaled = 0;

    friend bool operator==(const TracePoint&, const TracePoint&) = default;
};

struct BrickEvent {
    std::uint64_t t_ms = 0;
    std::string event;
    nlohmann::json details = nlohmann::json::object();

    nlohmann::json to_json() const { return {{"t", t_ms}, {"event", event}, {"details", details}}; }
};

struct MotorSnapshot {
    protocol::OutputState state;
    double velocity = 0.0;  // deg/s
    double tacho_count = 0.0;
    double block_tacho = 0.0;
    double rotation_count = 0.0;

    /// Counters as the wire reports them (whole degrees, truncated toward zero).
    protocol::OutputCounters counters() const;
    friend bool operator==(const MotorSnapshot&, const MotorSnapshot&) = default;
};

struct SensorSnapshot {
    std::uint8_t sensor_type = 0;
    std::uint8_t sensor_mode = 0;
    std::size_t trace_points = 0;

    friend bool operator==(const SensorSnapshot&, const SensorSnapshot&) = default;
};

struct BrickSnapshot {
    std::uint64_t clock_ms = 0;
    std::array<MotorSnapshot, protocol::kMotorCount> motors{};
    std::array<SensorSnapshot, protocol::kSensorCount> sensors{};
    std::array<std::vector<Bytes>, protocol::kMailboxCount> mailboxes{};
    std::uint16_t battery_mv = 0;
    std::uint32_t sleep_limit_ms = 0;
    std::uint64_t last_rx_ms = 0;
    bool asleep = false;

    friend bool operator==(const BrickSnapshot&, const BrickSnapshot&) = default;
};

enum class EmulatorErrc { UnsortedTrace, BadPort, BadTraceFile };

class EmulatorError : public std::runtime_error {
public:
    EmulatorError(EmulatorErrc code, const std::string& detail)
        : std::runtime_error(detail), code_(code) {}
    EmulatorErrc code() const noexcept { return code_; }

private:
    EmulatorErrc code_;
};

/// Deterministic virtual brick. Not thread-safe; one owner drives it.
class VirtualBrick {
public:
    explicit VirtualBrick(BrickConfig config = {});

    /// Executes one telegram. Returns reply bytes iff the telegram asked for
    /// one. Failures are reported in-band; nothing here throws on bad input.
    std::optional<Bytes> handle_telegram(std::span<const std::uint8_t> telegram);

    /// Advances virtual time in sub-ticks of at most max_subtick_ms.
    std::vector<BrickEvent> step(std::uint32_t dt_ms);

    void load_sensor_trace(std::uint8_t port, std::vector<TracePoint> trace);

    BrickSnapshot snapshot() const;
    const BrickConfig& config() const noexcept { return config_; }
    std::uint64_t clock_ms() const noexcept { return clock_ms_; }
    bool asleep() const noexcept { return asleep_; }

    /// Events raised while handling telegrams since the last call.
    std::vector<BrickEvent> take_events();

private:
    struct Motor {
        protocol::OutputState state;
        double velocity = 0.0;
        // millidegrees, so integer speeds integrate without drift
        std::int64_t tacho_mdeg = 0;
        std::int64_t block_mdeg = 0;
        std::int64_t rotation_mdeg = 0;
    };

    struct Sensor {
        std::uint8_t sensor_type = 0;
        std::uint8_t sensor_mode = 0;
        std::vector<TracePoint> trace;
    };

    protocol::StatusCode dispatch(std::uint8_t opcode, std::span<const std::uint8_t> body, Bytes& reply);
    protocol::StatusCode set_output_state(std::span<const std::uint8_t> body);
    void apply_output_state(std::uint8_t port, const protocol::OutputState& state);
    protocol::StatusCode get_output_state(std::span<const std::uint8_t> body, Bytes& reply);
    protocol::StatusCode set_input_mode(std::span<const std::uint8_t> body);
    protocol::StatusCode get_input_values(std::span<const std::uint8_t> body, Bytes& reply);
    protocol::StatusCode message_write(std::span<const std::uint8_t> body);
    protocol::StatusCode message_read(std::span<const std::uint8_t> body, Bytes& reply);
    protocol::StatusCode reset_motor_position(std::span<const std::uint8_t> body);
    protocol::StatusCode play_tone(std::span<const std::uint8_t> body);

    void advance_motor(std::size_t index, Motor& m, std::uint32_t dt_ms, std::vector<BrickEvent>& events);
    void emit(std::vector<BrickEvent>& sink, std::string name, nlohmann::json details = nlohmann::json::object());

    BrickConfig config_;
    std::array<Motor, protocol::kMotorCount> motors_{};
    std::array<Sensor, protocol::kSensorCount> sensors_{};
    std::array<std::deque<Bytes>, protocol::kMailboxCount> mailboxes_{};
    std::uint64_t clock_ms_ = 0;
    std::uint64_t last_rx_ms_ = 0;
    bool asleep_ = false;
    std::vector<BrickEvent> pending_;
};

/// Reads `time_ms,raw,scaled` rows; a non-numeric first line is a header.
std::vector<TracePoint> load_trace_csv(const std::string& path);
std::vector<TracePoint> parse_trace_csv(std::string_view text);

}  // namespace brickpad::emulator
