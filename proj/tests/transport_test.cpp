#include <pty.h>
#include <unistd.h>

#include <random>
#include <thread>

#include "brickpad/protocol/hex.hpp"
#include "brickpad/transport/errors.hpp"
#include "brickpad/transport/link.hpp"
#include "brickpad/transport/posix.hpp"
#include "doctest.h"

using namespace brickpad;
using namespace brickpad::transport;
using namespace std::chrono_literals;
using protocol::parse_hex;

namespace {

LinkErrc errc_of(auto&& fn) {
    try {
        fn();
    } catch (const LinkError& e) {
        return e.code();
    }
    FAIL("expected LinkError");
    return LinkErrc::IoError;
}

struct RawPair {
    std::unique_ptr<FramedLink> link;
    std::unique_ptr<ByteChannel> peer;
};

RawPair framed_with_raw_peer(std::size_t chunk = 4096) {
    auto [a, b] = make_memory_pipe(chunk);
    return {std::make_unique<FramedLink>(std::move(a)), std::move(b)};
}

Bytes read_exactly(ByteChannel& ch, std::size_t n) {
    Bytes out(n);
    std::size_t got = 0;
    while (got < n) {
        auto r = ch.read_some(std::span(out).subspan(got), 1000ms);
        REQUIRE(r.has_value());
        REQUIRE(*r > 0);
        got += *r;
    }
    return out;
}

}  // namespace

TEST_CASE("endpoint parsing") {
    CHECK(parse_endpoint("emu:").scheme == Scheme::Emulator);
    auto tcp = parse_endpoint("tcp:127.0.0.1:5555");
    CHECK(tcp.scheme == Scheme::Tcp);
    CHECK(tcp.host == "127.0.0.1");
    CHECK(tcp.port == 5555);
    CHECK(tcp.to_string() == "tcp:127.0.0.1:5555");
    auto serial = parse_endpoint("serial:/dev/rfcomm0");
    CHECK(serial.device == "/dev/rfcomm0");
    CHECK(parse_endpoint(serial.to_string()) == serial);

    for (auto bad : {"emu:x", "tcp:host", "tcp:host:0", "tcp:host:99999", "tcp::80", "serial:", "bt:00:11",
                     "nothing"}) {
        CAPTURE(bad);
        CHECK(errc_of([&] { parse_endpoint(bad); }) == LinkErrc::BadEndpoint);
    }
}

TEST_CASE("frame encoding") {
    CHECK(encode_frame(parse_hex("80 0D")) == parse_hex("02 00 80 0D"));
    Bytes big(64, 0xAA);
    auto wire = encode_frame(big);
    CHECK(wire[0] == 0x40);
    CHECK(wire[1] == 0x00);
    CHECK(wire.size() == 66);
    CHECK(errc_of([] { encode_frame(Bytes(65, 0)); }) == LinkErrc::OversizeTelegram);
    CHECK(errc_of([] { encode_frame(Bytes{}); }) == LinkErrc::EmptyTelegram);
}

TEST_CASE("send_frame writes prefix and telegram") {
    auto p = framed_with_raw_peer();
    p.link->send_frame(parse_hex("80 0D"));
    CHECK(read_exactly(*p.peer, 4) == parse_hex("02 00 80 0D"));
    CHECK(errc_of([&] { p.link->send_frame(Bytes(65, 0)); }) == LinkErrc::OversizeTelegram);
    CHECK(p.link->is_open());
}

TEST_CASE("recv_frame strips the prefix") {
    auto p = framed_with_raw_peer();
    p.peer->write_all(parse_hex("03 00 02 0B 00"));
    CHECK(p.link->recv_frame(100ms) == parse_hex("02 0B 00"));
}

TEST_CASE("recv_frame times out without bytes") {
    auto p = framed_with_raw_peer();
    auto start = std::chrono::steady_clock::now();
    CHECK(errc_of([&] { p.link->recv_frame(50ms); }) == LinkErrc::RecvTimeout);
    CHECK(std::chrono::steady_clock::now() - start >= 50ms);
    CHECK(p.link->is_open());
}

TEST_CASE("framing error is sticky") {
    auto p = framed_with_raw_peer();
    p.peer->write_all(parse_hex("00 00"));
    CHECK(errc_of([&] { p.link->recv_frame(100ms); }) == LinkErrc::FramingError);
    CHECK_FALSE(p.link->is_open());
    CHECK(errc_of([&] { p.link->recv_frame(10ms); }) == LinkErrc::LinkClosed);
    CHECK(errc_of([&] { p.link->send_frame(parse_hex("80 0D")); }) == LinkErrc::LinkClosed);
}

TEST_CASE("oversize length prefix and mid-frame end are framing errors") {
    {
        auto p = framed_with_raw_peer();
        p.peer->write_all(parse_hex("41 00"));
        CHECK(errc_of([&] { p.link->recv_frame(100ms); }) == LinkErrc::FramingError);
    }
    {
        auto p = framed_with_raw_peer();
        p.peer->write_all(parse_hex("05 00 02 0B"));
        p.peer->close();
        CHECK(errc_of([&] { p.link->recv_frame(100ms); }) == LinkErrc::FramingError);
        CHECK(errc_of([&] { p.link->recv_frame(10ms); }) == LinkErrc::LinkClosed);
    }
    {
        auto p = framed_with_raw_peer();
        p.peer->close();
        CHECK(errc_of([&] { p.link->recv_frame(100ms); }) == LinkErrc::LinkClosed);
    }
}

TEST_CASE("byte-at-a-time delivery preserves telegram sequence") {
    auto [a, b] = make_memory_pipe(1);
    FramedLink tx(std::move(a));
    FramedLink rx(std::move(b));

    std::mt19937 rng(3);
    std::vector<Bytes> sent;
    for (int i = 0; i < 300; ++i) {
        Bytes t(1 + rng() % 64);
        for (auto& x : t) x = static_cast<std::uint8_t>(rng());
        sent.push_back(t);
    }
    std::thread writer([&] {
        for (const auto& t : sent) tx.send_frame(t);
    });
    std::vector<Bytes> got;
    for (std::size_t i = 0; i < sent.size(); ++i) got.push_back(rx.recv_frame(2000ms));
    writer.join();
    CHECK(got == sent);
    CHECK(errc_of([&] { rx.recv_frame(20ms); }) == LinkErrc::RecvTimeout);
}

TEST_CASE("tap records traffic and close") {
    auto [a, b] = make_memory_pipe();
    auto log = std::make_shared<TapLog>();
    TapLink tap(std::make_unique<FramedLink>(std::move(a)), log);
    FramedLink peer(std::move(b));
    tap.send_frame(parse_hex("00 0B"));
    peer.send_frame(parse_hex("02 0B 00 E8 1C"));
    CHECK(tap.recv_frame(100ms) == parse_hex("02 0B 00 E8 1C"));
    tap.close();
    tap.close();
    auto entries = log->entries();
    REQUIRE(entries.size() == 3);
    CHECK(entries[0].direction == TapLog::Direction::Sent);
    CHECK(entries[1].direction == TapLog::Direction::Received);
    CHECK(entries[2].direction == TapLog::Direction::Closed);
    CHECK(log->sent() == std::vector<Bytes>{parse_hex("00 0B")});
}

TEST_CASE("tcp links") {
    TcpListener listener("127.0.0.1", 0);
    REQUIRE(listener.port() != 0);
    std::unique_ptr<FdChannel> server_side;
    std::thread acceptor([&] { server_side = listener.accept(2000ms); });
    auto client = open_link(parse_endpoint("tcp:127.0.0.1:" + std::to_string(listener.port())), 1000ms);
    acceptor.join();
    REQUIRE(server_side);
    FramedLink server(std::move(server_side));

    client->send_frame(parse_hex("00 0B"));
    CHECK(server.recv_frame(1000ms) == parse_hex("00 0B"));
    server.send_frame(parse_hex("02 0B 00 E8 1C"));
    CHECK(client->recv_frame(1000ms) == parse_hex("02 0B 00 E8 1C"));

    server.close();
    CHECK(errc_of([&] { client->recv_frame(1000ms); }) == LinkErrc::LinkClosed);
}

TEST_CASE("tcp connect to a closed port is refused") {
    std::uint16_t port;
    {
        TcpListener probe("127.0.0.1", 0);
        port = probe.port();
    }
    CHECK(errc_of([&] { open_link(parse_endpoint("tcp:127.0.0.1:" + std::to_string(port)), 500ms); }) ==
          LinkErrc::Refused);
    CHECK(errc_of([] { open_link(parse_endpoint("tcp:127.0.0.1:1"), 500ms); }) == LinkErrc::Refused);
}

TEST_CASE("binding an occupied port fails") {
    TcpListener first("127.0.0.1", 0);
    CHECK(errc_of([&] { TcpListener second("127.0.0.1", first.port()); }) == LinkErrc::BindFailed);
}

TEST_CASE("emu endpoint needs a loopback provider") {
    CHECK(errc_of([] { open_link(parse_endpoint("emu:"), 100ms); }) == LinkErrc::NoSuchDevice);
    std::unique_ptr<ByteChannel> far;
    OpenOptions options;
    options.loopback = [&] {
        auto [a, b] = make_memory_pipe();
        far = std::move(b);
        return std::move(a);
    };
    auto link = open_link(parse_endpoint("emu:"), 100ms, options);
    link->send_frame(parse_hex("80 0D"));
    CHECK(read_exactly(*far, 4) == parse_hex("02 00 80 0D"));
}

TEST_CASE("serial links over a pseudo terminal") {
    CHECK(errc_of([] { open_link(parse_endpoint("serial:/dev/does-not-exist"), 100ms); }) ==
          LinkErrc::NoSuchDevice);

    int master = -1;
    int slave = -1;
    char name[256] = {};
    REQUIRE(::openpty(&master, &slave, name, nullptr, nullptr) == 0);
    auto link = open_link(parse_endpoint(std::string("serial:") + name), 100ms);
    FramedLink brick_side(std::make_unique<FdChannel>(master, false));

    link->send_frame(parse_hex("00 0B"));
    CHECK(brick_side.recv_frame(1000ms) == parse_hex("00 0B"));
    brick_side.send_frame(parse_hex("02 0B 00 E8 1C"));
    CHECK(link->recv_frame(1000ms) == parse_hex("02 0B 00 E8 1C"));
    ::close(slave);
}
