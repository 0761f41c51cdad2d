#include "brickpad/transport/endpoint.hpp"

#include <charconv>

#include "brickpad/transport/errors.hpp"

namespace brickpad::transport {

std::string_view to_string(LinkErrc e) noexcept {
    switch (e) {
        case LinkErrc::BadEndpoint:
            return "BadEndpoint";
        case LinkErrc::ConnectTimeout:
            return "ConnectTimeout";
        case LinkErrc::NoSuchDevice:
            return "NoSuchDevice";
        case LinkErrc::Refused:
            return "Refused";
        case LinkErrc::BindFailed:
            return "BindFailed";
        case LinkErrc::LinkClosed:
            return "LinkClosed";
        case LinkErrc::OversizeTelegram:
            return "OversizeTelegram";
        case LinkErrc::EmptyTelegram:
            return "EmptyTelegram";
        case LinkErrc::RecvTimeout:
            return "RecvTimeout";
        case LinkErrc::FramingError:
            return "FramingError";
        case LinkErrc::IoError:
            return "IoError";
    }
    return "?";
}

LinkError::LinkError(LinkErrc code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

std::string LinkEndpoint::to_string() const {
    switch (scheme) {
        case Scheme::Serial:
            return "serial:" + device;
        case Scheme::Tcp:
            return "tcp:" + host + ":" + std::to_string(port);
        case Scheme::Emulator:
            return "emu:";
    }
    return {};
}

LinkEndpoint parse_endpoint(std::string_view text) {
    auto bad = [&](const char* why) {
        return LinkError(LinkErrc::BadEndpoint, "'" + std::string(text) + "': " + why);
    };
    auto colon = text.find(':');
    if (colon == std::string_view::npos) {
        throw bad("missing scheme");
    }
    auto scheme = text.substr(0, colon);
    auto rest = text.substr(colon + 1);

    LinkEndpoint ep;
    if (scheme == "emu") {
        if (!rest.empty()) throw bad("emu: takes no address");
        ep.scheme = Scheme::Emulator;
    } else if (scheme == "serial") {
        if (rest.empty()) throw bad("missing device path");
        ep.scheme = Scheme::Serial;
        ep.device = std::string(rest);
    } else if (scheme == "tcp") {
        auto sep = rest.rfind(':');
        if (sep == std::string_view::npos || sep == 0) throw bad("expected tcp:<host>:<port>");
        auto port_text = rest.substr(sep + 1);
        unsigned port = 0;
        auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
        if (ec != std::errc{} || ptr != port_text.data() + port_text.size() || port == 0 || port > 65535) {
            throw bad("port must be 1..65535");
        }
        ep.scheme = Scheme::Tcp;
        ep.host = std::string(rest.substr(0, sep));
        ep.port = static_cast<std::uint16_t>(port);
    } else {
        throw bad("unknown scheme");
    }
    return ep;
}

}  // namespace brickpad::transport
