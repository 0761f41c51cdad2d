#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <utility>

namespace brickpad::transport {

/// Unframed duplex byte stream underneath a link.
class ByteChannel {
public:
    virtual ~ByteChannel() = default;

    /// Writes every byte or throws LinkError(LinkClosed | IoError).
    virtual void write_all(std::span<const std::uint8_t> bytes) = 0;

    /// nullopt on timeout, 0 at end of stream, otherwise the count read.
    virtual std::optional<std::size_t> read_some(std::span<std::uint8_t> buffer,
                                                 std::chrono::milliseconds timeout) = 0;

    /// Safe from any thread; wakes a blocked reader.
    virtual void close() noexcept = 0;
    virtual bool is_open() const noexcept = 0;
};

/// In-memory connected pair. Each read_some returns at most `chunk` bytes,
/// so chunk=1 delivers the stream one byte at a time.
std::pair<std::unique_ptr<ByteChannel>, std::unique_ptr<ByteChannel>> make_memory_pipe(
    std::size_t chunk = 4096);

}  // namespace brickpad::transport
