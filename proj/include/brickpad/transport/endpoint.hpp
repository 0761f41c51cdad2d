#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace brickpad::transport {

enum class Scheme { Serial, Tcp, Emulator };

/// `serial:<device-path>`, `tcp:<host>:<port>` or `emu:`.
struct LinkEndpoint {
    Scheme scheme = Scheme::Emulator;
    std::string device;  // serial only
    std::string host;    // tcp only
    std::uint16_t port = 0;

    std::string to_string() const;
    friend bool operator==(const LinkEndpoint&, const LinkEndpoint&) = default;
};

/// Throws LinkError(BadEndpoint).
LinkEndpoint parse_endpoint(std::string_view text);

}  // namespace brickpad::transport
