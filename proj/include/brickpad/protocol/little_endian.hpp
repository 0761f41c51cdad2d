#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "brickpad/protocol/errors.hpp"
#include "brickpad/protocol/types.hpp"

namespace brickpad::protocol {

inline void put_u8(Bytes& out, std::uint8_t v) { out.push_back(v); }
inline void put_s8(Bytes& out, std::int8_t v) { out.push_back(static_cast<std::uint8_t>(v)); }

inline void put_u16(Bytes& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(Bytes& out, std::uint32_t v) {
    for (int shift = 0; shift < 32; shift += 8) {
        out.push_back(static_cast<std::uint8_t>((v >> shift) & 0xFF));
    }
}

inline void put_s16(Bytes& out, std::int16_t v) { put_u16(out, static_cast<std::uint16_t>(v)); }
inline void put_s32(Bytes& out, std::int32_t v) { put_u32(out, static_cast<std::uint32_t>(v)); }

/// Sequential little-endian reader; running past the end throws Truncated.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint8_t u8() {
        need(1);
        return data_[pos_++];
    }

    std::int8_t s8() { return static_cast<std::int8_t>(u8()); }

    std::uint16_t u16() {
        need(2);
        auto v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }

    std::int16_t s16() { return static_cast<std::int16_t>(u16()); }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) {
            v = (v << 8) | data_[pos_ + static_cast<std::size_t>(i)];
        }
        pos_ += 4;
        return v;
    }

    std::int32_t s32() { return static_cast<std::int32_t>(u32()); }

    std::span<const std::uint8_t> take(std::size_t n) {
        need(n);
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t remaining() const noexcept { return data_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) {
            throw CodecError(CodecErrc::Truncated, "need " + std::to_string(n) + " more byte(s)");
        }
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

}  // namespace brickpad::protocol
