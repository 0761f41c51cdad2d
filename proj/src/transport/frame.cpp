#include "brickpad/transport/frame.hpp"

#include <string>

#include "brickpad/protocol/little_endian.hpp"
#include "brickpad/transport/errors.hpp"

namespace brickpad::transport {

Bytes encode_frame(std::span<const std::uint8_t> telegram) {
    if (telegram.empty()) {
        throw LinkError(LinkErrc::EmptyTelegram, "telegram must carry at least one byte");
    }
    if (telegram.size() > protocol::kMaxTelegramSize) {
        throw LinkError(LinkErrc::OversizeTelegram, std::to_string(telegram.size()) + " bytes");
    }
    Bytes out;
    out.reserve(kFramePrefixSize + telegram.size());
    protocol::put_u16(out, static_cast<std::uint16_t>(telegram.size()));
    out.insert(out.end(), telegram.begin(), telegram.end());
    return out;
}

void FrameDecoder::feed(std::span<const std::uint8_t> bytes) {
    buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<Bytes> FrameDecoder::next() {
    if (failed_) {
        throw LinkError(LinkErrc::FramingError, "stream already desynchronized");
    }
    if (buffer_.size() < kFramePrefixSize) {
        return std::nullopt;
    }
    std::size_t len = buffer_[0] | (static_cast<std::size_t>(buffer_[1]) << 8);
    if (len == 0 || len > protocol::kMaxTelegramSize) {
        failed_ = true;
        throw LinkError(LinkErrc::FramingError, "length prefix " + std::to_string(len));
    }
    if (buffer_.size() < kFramePrefixSize + len) {
        return std::nullopt;
    }
    auto begin = buffer_.begin() + kFramePrefixSize;
    Bytes telegram(begin, begin + static_cast<std::ptrdiff_t>(len));
    buffer_.erase(buffer_.begin(), begin + static_cast<std::ptrdiff_t>(len));
    return telegram;
}

}  // namespace brickpad::transport
