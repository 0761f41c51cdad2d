#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace brickpad {

using Bytes = std::vector<std::uint8_t>;

}  // namespace brickpad

namespace brickpad::protocol {

inline constexpr std::size_t kMaxTelegramSize = 64;
inline constexpr std::size_t kMaxMessageData = 57;
inline constexpr std::size_t kMailboxCount = 10;
inline constexpr std::size_t kMotorCount = 3;
inline constexpr std::size_t kSensorCount = 4;
inline constexpr std::uint8_t kAllMotors = 0xFF;

enum class TelegramKind : std::uint8_t {
    DirectWithReply = 0x00,
    Reply = 0x02,
    DirectNoReply = 0x80,
};

enum class Opcode : std::uint8_t {
    PlayTone = 0x03,
    SetOutputState = 0x04,
    SetInputMode = 0x05,
    GetOutputState = 0x06,
    GetInputValues = 0x07,
    MessageWrite = 0x09,
    ResetMotorPosition = 0x0A,
    GetBatteryLevel = 0x0B,
    KeepAlive = 0x0D,
    MessageRead = 0x13,
};

/// Bit flags; any OR of the three named values is valid.
enum class MotorMode : std::uint8_t {
    None = 0x00,
    MotorOn = 0x01,
    Brake = 0x02,
    Regulated = 0x04,
};

inline constexpr std::uint8_t kMotorModeMask = 0x07;

constexpr MotorMode operator|(MotorMode a, MotorMode b) noexcept {
    return static_cast<MotorMode>(static_cast<std::uint8_t>(a) | static_cast<std::uint8_t>(b));
}

constexpr MotorMode operator&(MotorMode a, MotorMode b) noexcept {
    return static_cast<MotorMode>(static_cast<std::uint8_t>(a) & static_cast<std::uint8_t>(b));
}

constexpr bool has_flag(MotorMode set, MotorMode flag) noexcept {
    return (set & flag) == flag && flag != MotorMode::None;
}

enum class RegulationMode : std::uint8_t {
    Idle = 0x00,
    MotorSpeed = 0x01,
    MotorSync = 0x02,
};

enum class RunState : std::uint8_t {
    Idle = 0x00,
    RampUp = 0x10,
    Running = 0x20,
    RampDown = 0x40,
};

enum class StatusCode : std::uint8_t {
    Ok = 0x00,
    Pending = 0x20,
    MailboxEmpty = 0x40,
    UnknownCommand = 0xBE,
    OutOfRange = 0xC0,
    BadArguments = 0xFF,
};

/// Full motor command as carried by SetOutputState.
struct OutputState {
    std::uint8_t port = 0;  // 0..2 (A..C) or kAllMotors
    int power = 0;          // clamped to [-100, 100] on encode
    MotorMode mode = MotorMode::None;
    RegulationMode regulation = RegulationMode::Idle;
    int turn_ratio = 0;
    RunState run_state = RunState::Idle;
    std::uint32_t tacho_limit = 0;  // degrees; 0 runs forever

    friend bool operator==(const OutputState&, const OutputState&) = default;
};

struct OutputCounters {
    std::int32_t tacho_count = 0;
    std::int32_t block_tacho = 0;
    std::int32_t rotation_count = 0;

    friend bool operator==(const OutputCounters&, const OutputCounters&) = default;
};

struct OutputStateReading {
    OutputState state;
    OutputCounters counters;

    friend bool operator==(const OutputStateReading&, const OutputStateReading&) = default;
};

/// GetInputValues reply. Consumers must ignore the readings when valid is false.
struct InputValues {
    std::uint8_t port = 0;
    bool valid = false;
    bool calibrated = false;
    std::uint8_t sensor_type = 0;
    std::uint8_t sensor_mode = 0;
    std::uint16_t raw = 0;
    std::uint16_t normalized = 0;
    std::int16_t scaled = 0;
    std::int16_t calibrated_value = 0;

    friend bool operator==(const InputValues&, const InputValues&) = default;
};

struct MailboxMessage {
    std::uint8_t local_inbox = 0;
    Bytes data;  // without the trailing null

    friend bool operator==(const MailboxMessage&, const MailboxMessage&) = default;
};

std::optional<TelegramKind> kind_from_byte(std::uint8_t b) noexcept;
std::optional<Opcode> opcode_from_byte(std::uint8_t b) noexcept;
bool is_valid_regulation(std::uint8_t b) noexcept;
bool is_valid_run_state(std::uint8_t b) noexcept;

std::string_view to_string(TelegramKind k) noexcept;
std::string_view to_string(Opcode op) noexcept;
std::string_view to_string(RunState s) noexcept;
std::string_view to_string(StatusCode s) noexcept;

int clamp_percent(int value) noexcept;

}  // namespace brickpad::protocol
