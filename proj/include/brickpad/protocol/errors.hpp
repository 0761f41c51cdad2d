#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace brickpad::protocol {

enum class CodecErrc {
    MessageTooLong,
    NonAsciiText,
    OutOfRangeField,
    ArgLengthMismatch,
    UnsupportedOpcode,
    UnknownKind,
    NotAReply,
    OpcodeMismatch,
    Truncated,
    BadLength,
    OversizeTelegram,
    BadHexToken,
    EmptyLine,
};

std::string_view to_string(CodecErrc e) noexcept;

class CodecError : public std::runtime_error {
public:
    CodecError(CodecErrc code, const std::string& detail);

    CodecErrc code() const noexcept { return code_; }

private:
    CodecErrc code_;
};

}  // namespace brickpad::protocol
