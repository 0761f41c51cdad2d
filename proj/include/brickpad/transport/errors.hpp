#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace brickpad::transport {

enum class LinkErrc {
    BadEndpoint,
    ConnectTimeout,
    NoSuchDevice,
    Refused,
    BindFailed,
    LinkClosed,
    OversizeTelegram,
    EmptyTelegram,
    RecvTimeout,
    FramingError,
    IoError,
};

std::string_view to_string(LinkErrc e) noexcept;

class LinkError : public std::runtime_error {
public:
    LinkError(LinkErrc code, const std::string& detail);

    LinkErrc code() const noexcept { return code_; }

private:
    LinkErrc code_;
};

}  // namespace brickpad::transport
