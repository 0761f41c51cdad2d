#include "brickpad/protocol/types.hpp"

#include <algorithm>

#include "brickpad/protocol/errors.hpp"

namespace brickpad::protocol {

std::optional<TelegramKind> kind_from_byte(std::uint8_t b) noexcept {
    switch (b) {
        case 0x00:
            return TelegramKind::DirectWithReply;
        case 0x02:
            return TelegramKind::Reply;
        case 0x80:
            return TelegramKind::DirectNoReply;
        default:
            return std::nullopt;
    }
}

std::optional<Opcode> opcode_from_byte(std::uint8_t b) noexcept {
    switch (static_cast<Opcode>(b)) {
        case Opcode::PlayTone:
        case Opcode::SetOutputState:
        case Opcode::SetInputMode:
        case Opcode::GetOutputState:
        case Opcode::GetInputValues:
        case Opcode::MessageWrite:
        case Opcode::ResetMotorPosition:
        case Opcode::GetBatteryLevel:
        case Opcode::KeepAlive:
        case Opcode::MessageRead:
            return static_cast<Opcode>(b);
    }
    return std::nullopt;
}

bool is_valid_regulation(std::uint8_t b) noexcept { return b <= 0x02; }

bool is_valid_run_state(std::uint8_t b) noexcept {
    return b == 0x00 || b == 0x10 || b == 0x20 || b == 0x40;
}

std::string_view to_string(TelegramKind k) noexcept {
    switch (k) {
        case TelegramKind::DirectWithReply:
            return "DirectWithReply";
        case TelegramKind::Reply:
            return "Reply";
        case TelegramKind::DirectNoReply:
            return "DirectNoReply";
    }
    return "?";
}

std::string_view to_string(Opcode op) noexcept {
    switch (op) {
        case Opcode::PlayTone:
            return "PlayTone";
        case Opcode::SetOutputState:
            return "SetOutputState";
        case Opcode::SetInputMode:
            return "SetInputMode";
        case Opcode::GetOutputState:
            return "GetOutputState";
        case Opcode::GetInputValues:
            return "GetInputValues";
        case Opcode::MessageWrite:
            return "MessageWrite";
        case Opcode::ResetMotorPosition:
            return "ResetMotorPosition";
        case Opcode::GetBatteryLevel:
            return "GetBatteryLevel";
        case Opcode::KeepAlive:
            return "KeepAlive";
        case Opcode::MessageRead:
            return "MessageRead";
    }
    return "?";
}

std::string_view to_string(RunState s) noexcept {
    switch (s) {
        case RunState::Idle:
            return "Idle";
        case RunState::RampUp:
            return "RampUp";
        case RunState::Running:
            return "Running";
        case RunState::RampDown:
            return "RampDown";
    }
    return "?";
}

std::string_view to_string(StatusCode s) noexcept {
    switch (s) {
        case StatusCode::Ok:
            return "Ok";
        case StatusCode::Pending:
            return "Pending";
        case StatusCode::MailboxEmpty:
            return "MailboxEmpty";
        case StatusCode::UnknownCommand:
            return "UnknownCommand";
        case StatusCode::OutOfRange:
            return "OutOfRange";
        case StatusCode::BadArguments:
            return "BadArguments";
    }
    return "Unrecognized";
}

int clamp_percent(int value) noexcept { return std::clamp(value, -100, 100); }

std::string_view to_string(CodecErrc e) noexcept {
    switch (e) {
        case CodecErrc::MessageTooLong:
            return "MessageTooLong";
        case CodecErrc::NonAsciiText:
            return "NonAsciiText";
        case CodecErrc::OutOfRangeField:
            return "OutOfRangeField";
        case CodecErrc::ArgLengthMismatch:
            return "ArgLengthMismatch";
        case CodecErrc::UnsupportedOpcode:
            return "UnsupportedOpcode";
        case CodecErrc::UnknownKind:
            return "UnknownKind";
        case CodecErrc::NotAReply:
            return "NotAReply";
        case CodecErrc::OpcodeMismatch:
            return "OpcodeMismatch";
        case CodecErrc::Truncated:
            return "Truncated";
        case CodecErrc::BadLength:
            return "BadLength";
        case CodecErrc::OversizeTelegram:
            return "OversizeTelegram";
        case CodecErrc::BadHexToken:
            return "BadHexToken";
        case CodecErrc::EmptyLine:
            return "EmptyLine";
    }
    return "?";
}

CodecError::CodecError(CodecErrc code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

}  // namespace brickpad::protocol
