#pragma once

// Every telegram on a link is preceded by its length as a little-endian u16.
// Legal lengths are 1..64.

#include <cstdint>
#include <deque>
#include <optional>
#include <span>

#include "brickpad/protocol/types.hpp"

namespace brickpad::transport {

inline constexpr std::size_t kFramePrefixSize = 2;

/// Throws LinkError(OversizeTelegram | EmptyTelegram).
Bytes encode_frame(std::span<const std::uint8_t> telegram);

/// Incremental frame splitter. Tolerates arbitrary chunking of the input.
/// Once a bad length prefix is seen every call to next() throws FramingError.
class FrameDecoder {
public:
    void feed(std::span<const std::uint8_t> bytes);
    std::optional<Bytes> next();

    /// True when bytes of an incomplete frame are buffered.
    bool mid_frame() const noexcept { return !buffer_.empty(); }
    bool failed() const noexcept { return failed_; }

private:
    std::deque<std::uint8_t> buffer_;
    bool failed_ = false;
};

}  // namespace brickpad::transport
