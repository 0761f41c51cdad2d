#include "brickpad/protocol/hex.hpp"

#include <cctype>

#include "brickpad/protocol/errors.hpp"

namespace brickpad::protocol {

namespace {

int nibble(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

Bytes parse_hex(std::string_view line) {
    Bytes out;
    std::size_t i = 0;
    while (i < line.size()) {
        if (is_space(line[i])) {
            ++i;
            continue;
        }
        std::size_t start = i;
        while (i < line.size() && !is_space(line[i])) {
            ++i;
        }
        auto token = line.substr(start, i - start);
        int hi = token.size() == 2 ? nibble(token[0]) : -1;
        int lo = token.size() == 2 ? nibble(token[1]) : -1;
        if (hi < 0 || lo < 0) {
            // tokens are echoed back to operators; keep them short
            throw CodecError(CodecErrc::BadHexToken, "'" + std::string(token.substr(0, 16)) + "'");
        }
        out.push_back(static_cast<std::uint8_t>((hi << 4) | lo));
    }
    if (out.empty()) {
        throw CodecError(CodecErrc::EmptyLine, "no hex tokens");
    }
    return out;
}

std::string format_hex(std::span<const std::uint8_t> bytes) {
    static constexpr char kDigits[] = "0123456789ABCDEF";
    std::string out;
    out.reserve(bytes.size() * 3);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        if (i != 0) out.push_back(' ');
        out.push_back(kDigits[bytes[i] >> 4]);
        out.push_back(kDigits[bytes[i] & 0x0F]);
    }
    return out;
}

}  // namespace brickpad::protocol
