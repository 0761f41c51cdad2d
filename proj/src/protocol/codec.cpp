#include "brickpad/protocol/codec.hpp"

#include <algorithm>
#include <string>

#include "brickpad/protocol/little_endian.hpp"

namespace brickpad::protocol {

namespace {

std::string hex_byte(std::uint8_t b) {
    static constexpr char kDigits[] = "0123456789ABCDEF";
    return {'0', 'x', kDigits[b >> 4], kDigits[b & 0x0F]};
}

Telegram make(TelegramKind kind, Opcode op, Bytes payload) {
    return Telegram{kind, static_cast<std::uint8_t>(op), std::move(payload)};
}

TelegramKind kind_for(bool want_reply) {
    return want_reply ? TelegramKind::DirectWithReply : TelegramKind::DirectNoReply;
}

void expect_exact(std::span<const std::uint8_t> payload, std::size_t size, const char* what) {
    if (payload.size() < size) {
        throw CodecError(CodecErrc::Truncated, std::string(what) + " payload has " +
                                                   std::to_string(payload.size()) + " byte(s), need " +
                                                   std::to_string(size));
    }
    if (payload.size() > size) {
        throw CodecError(CodecErrc::BadLength, std::string(what) + " payload has " +
                                                   std::to_string(payload.size()) + " byte(s), expected " +
                                                   std::to_string(size));
    }
}

}  // namespace

Bytes Telegram::serialize() const {
    Bytes out;
    out.reserve(size());
    out.push_back(static_cast<std::uint8_t>(kind));
    out.push_back(opcode);
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

Telegram decode_telegram(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2) {
        throw CodecError(CodecErrc::Truncated, "telegram shorter than kind+opcode");
    }
    if (bytes.size() > kMaxTelegramSize) {
        throw CodecError(CodecErrc::OversizeTelegram, std::to_string(bytes.size()) + " bytes");
    }
    auto kind = kind_from_byte(bytes[0]);
    if (!kind) {
        throw CodecError(CodecErrc::UnknownKind, hex_byte(bytes[0]));
    }
    return Telegram{*kind, bytes[1], Bytes(bytes.begin() + 2, bytes.end())};
}

Telegram encode_message_write(std::uint8_t mailbox, std::span<const std::uint8_t> data) {
    if (data.size() > kMaxMessageData) {
        throw CodecError(CodecErrc::MessageTooLong, "Message size must be less than 58 bytes.");
    }
    if (mailbox >= kMailboxCount) {
        throw CodecError(CodecErrc::OutOfRangeField, "mailbox " + std::to_string(mailbox));
    }
    Bytes payload;
    payload.reserve(data.size() + 3);
    payload.push_back(mailbox);
    payload.push_back(static_cast<std::uint8_t>(data.size() + 1));
    payload.insert(payload.end(), data.begin(), data.end());
    payload.push_back(0x00);
    return make(TelegramKind::DirectNoReply, Opcode::MessageWrite, std::move(payload));
}

Telegram encode_message_write_text(std::uint8_t mailbox, std::string_view text) {
    Bytes data;
    data.reserve(text.size());
    for (char c : text) {
        auto b = static_cast<unsigned char>(c);
        if (b > 127) {
            throw CodecError(CodecErrc::NonAsciiText, "byte " + hex_byte(b) + " is not 7-bit ASCII");
        }
        data.push_back(b);
    }
    return encode_message_write(mailbox, data);
}

Telegram encode_set_output_state(const OutputState& state, bool want_reply) {
    if (state.port > 2 && state.port != kAllMotors) {
        throw CodecError(CodecErrc::OutOfRangeField, "port " + std::to_string(state.port));
    }
    auto mode = static_cast<std::uint8_t>(state.mode);
    if ((mode & ~kMotorModeMask) != 0) {
        throw CodecError(CodecErrc::OutOfRangeField, "mode " + hex_byte(mode));
    }
    if (!is_valid_regulation(static_cast<std::uint8_t>(state.regulation))) {
        throw CodecError(CodecErrc::OutOfRangeField, "regulation");
    }
    if (!is_valid_run_state(static_cast<std::uint8_t>(state.run_state))) {
        throw CodecError(CodecErrc::OutOfRangeField, "run state");
    }
    Bytes payload;
    payload.reserve(10);
    put_u8(payload, state.port);
    put_s8(payload, static_cast<std::int8_t>(clamp_percent(state.power)));
    put_u8(payload, mode);
    put_u8(payload, static_cast<std::uint8_t>(state.regulation));
    put_s8(payload, static_cast<std::int8_t>(clamp_percent(state.turn_ratio)));
    put_u8(payload, static_cast<std::uint8_t>(state.run_state));
    put_u32(payload, state.tacho_limit);
    return make(kind_for(want_reply), Opcode::SetOutputState, std::move(payload));
}

std::optional<std::size_t> simple_query_arg_length(Opcode op) noexcept {
    switch (op) {
        case Opcode::PlayTone:
            return 4;
        case Opcode::SetInputMode:
        case Opcode::MessageRead:
            return 3;
        case Opcode::ResetMotorPosition:
            return 2;
        case Opcode::GetOutputState:
        case Opcode::GetInputValues:
            return 1;
        case Opcode::GetBatteryLevel:
        case Opcode::KeepAlive:
            return 0;
        case Opcode::SetOutputState:
        case Opcode::MessageWrite:
            return std::nullopt;
    }
    return std::nullopt;
}

Telegram encode_simple_query(Opcode op, std::span<const std::uint8_t> args, bool want_reply) {
    auto expected = simple_query_arg_length(op);
    if (!expected) {
        throw CodecError(CodecErrc::UnsupportedOpcode,
                         std::string(to_string(op)) + " has a dedicated encoder");
    }
    if (args.size() != *expected) {
        throw CodecError(CodecErrc::ArgLengthMismatch, std::string(to_string(op)) + " takes " +
                                                           std::to_string(*expected) + " byte(s), got " +
                                                           std::to_string(args.size()));
    }
    return make(kind_for(want_reply), op, Bytes(args.begin(), args.end()));
}

Telegram encode_get_output_state(std::uint8_t port) {
    const std::uint8_t args[] = {port};
    return encode_simple_query(Opcode::GetOutputState, args, true);
}

Telegram encode_get_input_values(std::uint8_t port) {
    const std::uint8_t args[] = {port};
    return encode_simple_query(Opcode::GetInputValues, args, true);
}

Telegram encode_get_battery_level() { return encode_simple_query(Opcode::GetBatteryLevel, {}, true); }

Telegram encode_keep_alive(bool want_reply) {
    return encode_simple_query(Opcode::KeepAlive, {}, want_reply);
}

Telegram encode_reset_motor_position(std::uint8_t port, bool relative, bool want_reply) {
    const std::uint8_t args[] = {port, static_cast<std::uint8_t>(relative ? 1 : 0)};
    return encode_simple_query(Opcode::ResetMotorPosition, args, want_reply);
}

Telegram encode_set_input_mode(std::uint8_t port, std::uint8_t sensor_type, std::uint8_t sensor_mode,
                               bool want_reply) {
    const std::uint8_t args[] = {port, sensor_type, sensor_mode};
    return encode_simple_query(Opcode::SetInputMode, args, want_reply);
}

Telegram encode_message_read(std::uint8_t remote_inbox, std::uint8_t local_inbox, bool remove) {
    const std::uint8_t args[] = {remote_inbox, local_inbox, static_cast<std::uint8_t>(remove ? 1 : 0)};
    return encode_simple_query(Opcode::MessageRead, args, true);
}

Telegram encode_play_tone(std::uint16_t frequency_hz, std::uint16_t duration_ms, bool want_reply) {
    Bytes args;
    put_u16(args, frequency_hz);
    put_u16(args, duration_ms);
    return encode_simple_query(Opcode::PlayTone, args, want_reply);
}

OutputState brake_state(std::uint8_t port) noexcept {
    return OutputState{port,
                       0,
                       MotorMode::MotorOn | MotorMode::Brake | MotorMode::Regulated,
                       RegulationMode::MotorSpeed,
                       0,
                       RunState::Running,
                       0};
}

OutputState coast_state(std::uint8_t port) noexcept {
    OutputState s;
    s.port = port;
    return s;
}

Telegram brake_image(std::uint8_t port) { return encode_set_output_state(brake_state(port), false); }

Telegram coast_image(std::uint8_t port) { return encode_set_output_state(coast_state(port), false); }

Reply decode_reply(std::span<const std::uint8_t> bytes, Opcode expected) {
    return decode_reply(bytes, static_cast<std::uint8_t>(expected));
}

Reply decode_reply(std::span<const std::uint8_t> bytes, std::uint8_t expected) {
    if (!bytes.empty() && bytes[0] != static_cast<std::uint8_t>(TelegramKind::Reply)) {
        throw CodecError(CodecErrc::NotAReply, "kind byte " + hex_byte(bytes[0]));
    }
    if (bytes.size() < 3) {
        throw CodecError(CodecErrc::Truncated, "reply shorter than 3 bytes");
    }
    if (bytes[1] != expected) {
        throw CodecError(CodecErrc::OpcodeMismatch,
                         "expected " + hex_byte(expected) + ", got " + hex_byte(bytes[1]));
    }
    return Reply{static_cast<StatusCode>(bytes[2]), Bytes(bytes.begin() + 3, bytes.end())};
}

Bytes encode_reply(std::uint8_t opcode, StatusCode status, std::span<const std::uint8_t> payload) {
    Bytes out;
    out.reserve(3 + payload.size());
    out.push_back(static_cast<std::uint8_t>(TelegramKind::Reply));
    out.push_back(opcode);
    out.push_back(static_cast<std::uint8_t>(status));
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

OutputStateReading decode_output_state_reply(std::span<const std::uint8_t> payload) {
    expect_exact(payload, kOutputStateReplySize, "GetOutputState");
    ByteReader r(payload);
    OutputStateReading out;
    out.state.port = r.u8();
    out.state.power = r.s8();
    out.state.mode = static_cast<MotorMode>(r.u8());
    out.state.regulation = static_cast<RegulationMode>(r.u8());
    out.state.turn_ratio = r.s8();
    out.state.run_state = static_cast<RunState>(r.u8());
    out.state.tacho_limit = r.u32();
    out.counters.tacho_count = r.s32();
    out.counters.block_tacho = r.s32();
    out.counters.rotation_count = r.s32();
    return out;
}

Bytes encode_output_state_reply(const OutputState& state, const OutputCounters& counters) {
    Bytes out;
    out.reserve(kOutputStateReplySize);
    put_u8(out, state.port);
    put_s8(out, static_cast<std::int8_t>(clamp_percent(state.power)));
    put_u8(out, static_cast<std::uint8_t>(state.mode));
    put_u8(out, static_cast<std::uint8_t>(state.regulation));
    put_s8(out, static_cast<std::int8_t>(clamp_percent(state.turn_ratio)));
    put_u8(out, static_cast<std::uint8_t>(state.run_state));
    put_u32(out, state.tacho_limit);
    put_s32(out, counters.tacho_count);
    put_s32(out, counters.block_tacho);
    put_s32(out, counters.rotation_count);
    return out;
}

InputValues decode_input_values_reply(std::span<const std::uint8_t> payload) {
    expect_exact(payload, kInputValuesReplySize, "GetInputValues");
    ByteReader r(payload);
    InputValues v;
    v.port = r.u8();
    v.valid = r.u8() != 0;
    v.calibrated = r.u8() != 0;
    v.sensor_type = r.u8();
    v.sensor_mode = r.u8();
    v.raw = r.u16();
    v.normalized = r.u16();
    v.scaled = r.s16();
    v.calibrated_value = r.s16();
    return v;
}

Bytes encode_input_values_reply(const InputValues& v) {
    Bytes out;
    out.reserve(kInputValuesReplySize);
    put_u8(out, v.port);
    put_u8(out, v.valid ? 1 : 0);
    put_u8(out, v.calibrated ? 1 : 0);
    put_u8(out, v.sensor_type);
    put_u8(out, v.sensor_mode);
    put_u16(out, v.raw);
    put_u16(out, v.normalized);
    put_s16(out, v.scaled);
    put_s16(out, v.calibrated_value);
    return out;
}

std::uint16_t decode_battery_reply(std::span<const std::uint8_t> payload) {
    expect_exact(payload, 2, "GetBatteryLevel");
    return ByteReader(payload).u16();
}

std::uint32_t decode_keep_alive_reply(std::span<const std::uint8_t> payload) {
    expect_exact(payload, 4, "KeepAlive");
    return ByteReader(payload).u32();
}

MailboxMessage decode_message_read_reply(std::span<const std::uint8_t> payload) {
    expect_exact(payload, kMessageReadReplySize, "MessageRead");
    ByteReader r(payload);
    MailboxMessage m;
    m.local_inbox = r.u8();
    std::size_t size = r.u8();
    auto data = r.take(kMessageReadDataSize);
    if (size > kMessageReadDataSize) {
        throw CodecError(CodecErrc::OutOfRangeField, "message size " + std::to_string(size));
    }
    // size counts the trailing null when present
    std::size_t len = size;
    if (len > 0 && data[len - 1] == 0x00) {
        --len;
    }
    m.data.assign(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(len));
    return m;
}

Bytes encode_message_read_reply(std::uint8_t local_inbox, std::span<const std::uint8_t> data) {
    if (data.size() + 1 > kMessageReadDataSize) {
        throw CodecError(CodecErrc::MessageTooLong, std::to_string(data.size()) + " bytes");
    }
    Bytes out;
    out.reserve(kMessageReadReplySize);
    put_u8(out, local_inbox);
    put_u8(out, data.empty() ? 0 : static_cast<std::uint8_t>(data.size() + 1));
    out.insert(out.end(), data.begin(), data.end());
    out.resize(kMessageReadReplySize, 0x00);
    return out;
}

}  // namespace brickpad::protocol
