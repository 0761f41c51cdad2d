#pragma once

#include <span>
#include <string>
#include <string_view>

#include "brickpad/protocol/types.hpp"

namespace brickpad::protocol {

/// Whitespace-separated two-digit hex tokens, case-insensitive.
/// Throws CodecError(BadHexToken | EmptyLine).
Bytes parse_hex(std::string_view line);

/// Uppercase tokens joined by single spaces; empty input gives "".
std::string format_hex(std::span<const std::uint8_t> bytes);

}  // namespace brickpad::protocol
