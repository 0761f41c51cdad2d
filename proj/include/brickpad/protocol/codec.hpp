#pragma once

// Direct-command telegram codec. Wire layout is [kind][opcode][payload...];
// every multi-byte integer is little-endian and signed fields are
// two's-complement.

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

#include "brickpad/protocol/errors.hpp"
#include "brickpad/protocol/types.hpp"

namespace brickpad::protocol {

struct Telegram {
    TelegramKind kind = TelegramKind::DirectNoReply;
    std::uint8_t opcode = 0;  // raw byte, may be unknown after decode
    Bytes payload;

    bool wants_reply() const noexcept { return kind == TelegramKind::DirectWithReply; }
    std::optional<Opcode> known_opcode() const noexcept { return opcode_from_byte(opcode); }
    std::size_t size() const noexcept { return 2 + payload.size(); }
    Bytes serialize() const;

    friend bool operator==(const Telegram&, const Telegram&) = default;
};

/// Parses [kind][opcode][payload]. Unknown opcodes are kept; unknown kinds are not.
Telegram decode_telegram(std::span<const std::uint8_t> bytes);

// ---- commands --------------------------------------------------------------

/// Always DirectNoReply. Appends the trailing null so the wire length is 5 + data.size().
Telegram encode_message_write(std::uint8_t mailbox, std::span<const std::uint8_t> data);
Telegram encode_message_write_text(std::uint8_t mailbox, std::string_view text);

Telegram encode_set_output_state(const OutputState& state, bool want_reply);

/// Fixed-layout commands and queries; args must match the opcode's length
/// table (PlayTone 4, SetInputMode 3, GetOutputState 1, GetInputValues 1,
/// ResetMotorPosition 2, GetBatteryLevel 0, KeepAlive 0, MessageRead 3).
Telegram encode_simple_query(Opcode op, std::span<const std::uint8_t> args, bool want_reply);

std::optional<std::size_t> simple_query_arg_length(Opcode op) noexcept;

Telegram encode_get_output_state(std::uint8_t port);
Telegram encode_get_input_values(std::uint8_t port);
Telegram encode_get_battery_level();
Telegram encode_keep_alive(bool want_reply);
Telegram encode_reset_motor_position(std::uint8_t port, bool relative, bool want_reply);
Telegram encode_set_input_mode(std::uint8_t port, std::uint8_t sensor_type, std::uint8_t sensor_mode,
                               bool want_reply);
Telegram encode_message_read(std::uint8_t remote_inbox, std::uint8_t local_inbox, bool remove);
Telegram encode_play_tone(std::uint16_t frequency_hz, std::uint16_t duration_ms, bool want_reply);

/// Powered stop: power 0, MotorOn|Brake|Regulated, MotorSpeed, Running, no limit.
OutputState brake_state(std::uint8_t port) noexcept;
/// De-energized: every field zero.
OutputState coast_state(std::uint8_t port) noexcept;
Telegram brake_image(std::uint8_t port);
Telegram coast_image(std::uint8_t port);

// ---- replies ---------------------------------------------------------------

struct Reply {
    StatusCode status = StatusCode::Ok;
    Bytes payload;  // bytes after the status byte

    bool ok() const noexcept { return status == StatusCode::Ok; }
    friend bool operator==(const Reply&, const Reply&) = default;
};

Reply decode_reply(std::span<const std::uint8_t> bytes, Opcode expected);
/// Same as above for a raw opcode byte (the raw console may send unknown opcodes).
Reply decode_reply(std::span<const std::uint8_t> bytes, std::uint8_t expected);

Bytes encode_reply(std::uint8_t opcode, StatusCode status, std::span<const std::uint8_t> payload = {});

inline constexpr std::size_t kOutputStateReplySize = 22;
inline constexpr std::size_t kInputValuesReplySize = 13;
inline constexpr std::size_t kMessageReadReplySize = 61;
inline constexpr std::size_t kMessageReadDataSize = 59;

OutputStateReading decode_output_state_reply(std::span<const std::uint8_t> payload);
Bytes encode_output_state_reply(const OutputState& state, const OutputCounters& counters);

InputValues decode_input_values_reply(std::span<const std::uint8_t> payload);
Bytes encode_input_values_reply(const InputValues& values);

std::uint16_t decode_battery_reply(std::span<const std::uint8_t> payload);
std::uint32_t decode_keep_alive_reply(std::span<const std::uint8_t> payload);

MailboxMessage decode_message_read_reply(std::span<const std::uint8_t> payload);
/// data.size() must be ≤ 58 (message plus null must fit the 59-byte field).
Bytes encode_message_read_reply(std::uint8_t local_inbox, std::span<const std::uint8_t> data);

}  // namespace brickpad::protocol
