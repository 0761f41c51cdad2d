#include <algorithm>
#include <thread>

#include "brickpad/protocol/hex.hpp"
#include "doctest.h"
#include "rig.hpp"

using namespace brickpad;
using namespace brickpad::session;
using namespace brickpad::protocol;
using brickpad::testing::FaultLink;
using brickpad::testing::Rig;
using brickpad::testing::quiet_config;
using Dir = transport::TapLog::Direction;
using namespace std::chrono_literals;

namespace {

emulator::BrickConfig sleepy(std::uint32_t limit) {
    emulator::BrickConfig b;
    b.sleep_limit_ms = limit;
    return b;
}

OutputState running(std::uint8_t port, int power, std::uint32_t limit) {
    return OutputState{port, power, MotorMode::MotorOn | MotorMode::Regulated, RegulationMode::MotorSpeed, 0,
                       RunState::Running, limit};
}

template <class Fn>
SessionErrc error_of(Fn&& fn) {
    try {
        fn();
    } catch (const SessionError& e) {
        return e.code();
    }
    FAIL("expected SessionError");
    return SessionErrc::CommandFailed;
}

}  // namespace

TEST_CASE("transition table") {
    const Phase all[] = {Phase::Disconnected, Phase::Connecting, Phase::Connected, Phase::Disconnecting};
    const std::pair<Phase, Phase> legal[] = {
        {Phase::Disconnected, Phase::Connecting},
        {Phase::Connecting, Phase::Connected},
        {Phase::Connecting, Phase::Disconnected},
        {Phase::Connected, Phase::Disconnecting},
        {Phase::Disconnecting, Phase::Disconnected},
    };
    for (auto from : all) {
        for (auto to : all) {
            bool expected = std::find(std::begin(legal), std::end(legal), std::pair{from, to}) != std::end(legal);
            CAPTURE(to_string(from));
            CAPTURE(to_string(to));
            CHECK(is_legal_transition(from, to) == expected);
        }
    }
}

TEST_CASE("keep-alive interval") {
    CHECK(keepalive_interval_for(600000) == 300000ms);
    CHECK(keepalive_interval_for(0) == 30000ms);
    CHECK(keepalive_interval_for(1000) == 1000ms);
    CHECK(keepalive_interval_for(1999) == 1000ms);
    CHECK(keepalive_interval_for(5000) == 2500ms);
}

TEST_CASE("connect learns the sleep limit") {
    Rig rig;
    rig.session.connect();
    auto s = rig.session.state();
    CHECK(s.phase == Phase::Connected);
    CHECK(s.sleep_limit_ms == 600000);
    CHECK(s.keepalive_interval == 300000ms);
    CHECK_FALSE(s.last_error);

    Rig never({}, sleepy(0));
    never.session.connect();
    CHECK(never.session.state().keepalive_interval == 30000ms);
}

TEST_CASE("refused connect returns to Disconnected") {
    Rig rig;
    rig.refuse = true;
    std::vector<Phase> phases;
    rig.session.add_observer([&](const SessionEvent& e) {
        if (e.type == SessionEvent::Type::PhaseChanged) phases.push_back(e.phase);
    });
    CHECK(error_of([&] { rig.session.connect(); }) == SessionErrc::Refused);
    CHECK(rig.session.phase() == Phase::Disconnected);
    CHECK(rig.session.state().last_error);
    CHECK(phases == std::vector{Phase::Connecting, Phase::Disconnected});
}

TEST_CASE("emu without a loopback is NoSuchDevice") {
    SimulatedClock clock;
    Session s(quiet_config(), [](const auto& e, Millis t) { return transport::open_link(e, t); }, clock);
    CHECK(error_of([&] { s.connect(); }) == SessionErrc::NoSuchDevice);
    CHECK(s.phase() == Phase::Disconnected);
}

TEST_CASE("handshake failure") {
    Rig rig;
    // the opener wraps every link in a FaultLink; corrupt the very first reply
    auto opener = [&](const transport::LinkEndpoint& e, Millis t) {
        auto link = rig.open(e, t);
        static_cast<FaultLink*>(link.get())->fault = FaultLink::Fault::WrongOpcode;
        return link;
    };
    Session s(quiet_config(), opener, rig.clock);
    CHECK(error_of([&] { s.connect(); }) == SessionErrc::HandshakeFailed);
    CHECK(s.phase() == Phase::Disconnected);
    CHECK(rig.host.open_connections() == 0);
}

TEST_CASE("requests against a fresh emulator") {
    Rig rig;
    rig.session.connect();
    auto r = rig.session.request(encode_get_battery_level());
    CHECK(r.ok());
    CHECK(decode_battery_reply(r.payload) == 7400);

    auto t = rig.session.poll_telemetry();
    CHECK(t.battery_mv == 7400);
    for (const auto& m : t.motors) {
        CHECK(m.counters.tacho_count == 0);
        CHECK(m.counters.block_tacho == 0);
        CHECK(m.counters.rotation_count == 0);
    }
    CHECK(error_of([&] { rig.session.request(encode_keep_alive(false)); }) == SessionErrc::NotARequest);
}

TEST_CASE("send reaches the brick") {
    Rig rig;
    rig.session.connect();
    rig.session.send(encode_message_write_text(3, "hello"));
    CHECK(rig.host.snapshot().mailboxes[3].size() == 1);
    rig.session.send(encode_set_output_state(running(1, 40, 0), false));
    rig.clock.advance(10ms);
    CHECK(rig.host.snapshot().motors[1].velocity == 360.0);
}

TEST_CASE("operations while disconnected put nothing on the wire") {
    Rig rig;
    CHECK(error_of([&] { rig.session.request(encode_get_battery_level()); }) == SessionErrc::NotConnected);
    CHECK(error_of([&] { rig.session.send(coast_image(0)); }) == SessionErrc::NotConnected);
    CHECK(error_of([&] { rig.session.poll_telemetry(); }) == SessionErrc::NotConnected);
    rig.session.disconnect();
    rig.session.tick();
    CHECK(rig.tap->entries().empty());
    CHECK(rig.opens == 0);
}

TEST_CASE("connect twice") {
    Rig rig;
    rig.session.connect();
    CHECK(error_of([&] { rig.session.connect(); }) == SessionErrc::AlreadyConnected);
    CHECK(rig.session.phase() == Phase::Connected);
}

TEST_CASE("wrong reply opcode tears the session down") {
    Rig rig;
    rig.session.connect();
    rig.fault_link->fault = FaultLink::Fault::WrongOpcode;
    CHECK(error_of([&] { rig.session.request(encode_get_battery_level()); }) == SessionErrc::ProtocolViolation);
    CHECK(rig.session.phase() == Phase::Disconnected);
    REQUIRE(rig.session.state().last_error);
    CHECK(rig.session.state().last_error->find("protocol violation") != std::string::npos);
    CHECK(rig.host.open_connections() == 0);
}

TEST_CASE("timeouts retry queries but never commands") {
    auto config = quiet_config();
    config.request_timeout = 5ms;
    Rig rig(config);
    rig.session.connect();
    rig.fault_link->fault = FaultLink::Fault::DropReplies;

    rig.tap->clear();
    CHECK(error_of([&] { rig.session.request(encode_get_battery_level()); }) == SessionErrc::RequestTimeout);
    CHECK(rig.tap->sent().size() == 3);

    rig.tap->clear();
    CHECK(error_of([&] { rig.session.request(encode_set_output_state(running(0, 10, 0), true)); }) ==
          SessionErrc::RequestTimeout);
    CHECK(rig.tap->sent().size() == 1);

    rig.tap->clear();
    CHECK(error_of([&] { rig.session.request(encode_message_read(0, 0, true)); }) == SessionErrc::RequestTimeout);
    CHECK(rig.tap->sent().size() == 1);

    CHECK(rig.session.phase() == Phase::Connected);
}

TEST_CASE("keep-alive keeps a sleepy brick awake") {
    Rig rig({quiet_config()}, sleepy(1000));
    rig.session.connect();
    CHECK(rig.session.state().keepalive_interval == 1000ms);
    rig.clock.advance(12000ms);
    CHECK(rig.session.phase() == Phase::Connected);
    CHECK_FALSE(brickpad::testing::first_event_time(rig.host, "BrickSlept"));
    std::size_t keepalives = 0;
    for (const auto& t : rig.tap->sent()) keepalives += t[1] == static_cast<std::uint8_t>(Opcode::KeepAlive);
    CHECK(keepalives == 13);
}

TEST_CASE("without keep-alive the brick sleeps and the session notices") {
    auto config = quiet_config();
    config.keepalive = false;
    Rig rig(config, sleepy(1000));
    std::optional<std::uint64_t> lost_at;
    rig.session.add_observer([&](const SessionEvent& e) {
        if (e.type == SessionEvent::Type::PhaseChanged && e.phase == Phase::Disconnected) lost_at = rig.now_ms();
    });
    rig.session.connect();
    rig.clock.advance(2000ms);
    auto slept = brickpad::testing::first_event_time(rig.host, "BrickSlept");
    REQUIRE(slept);
    CHECK(*slept >= 1000);
    CHECK(*slept <= 1100);
    REQUIRE(lost_at);
    CHECK(*lost_at >= 1000);
    CHECK(*lost_at <= 1100);
    CHECK(rig.session.phase() == Phase::Disconnected);
}

TEST_CASE("disconnect coasts every motor before closing") {
    Rig rig;
    rig.session.connect();
    rig.session.send(encode_set_output_state(running(0, 75, 0), false));
    rig.clock.advance(100ms);
    rig.tap->clear();
    rig.host.clear_events();
    rig.session.disconnect();

    auto entries = rig.tap->entries();
    REQUIRE(entries.size() == 4);
    for (std::uint8_t port = 0; port < 3; ++port) {
        CHECK(entries[port].direction == Dir::Sent);
        CHECK(entries[port].telegram == coast_image(port).serialize());
    }
    CHECK(entries[3].direction == Dir::Closed);

    // brick side: motor A lost its mode before the link went away
    auto events = rig.host.events();
    auto coast_a = std::find_if(events.begin(), events.end(), [](const auto& e) {
        return e.event == "output_state" && e.details["port"] == 0 && e.details["mode"] == 0;
    });
    auto closed = std::find_if(events.begin(), events.end(), [](const auto& e) { return e.event == "link_closed"; });
    REQUIRE(coast_a != events.end());
    REQUIRE(closed != events.end());
    CHECK(coast_a < closed);
    CHECK(rig.host.snapshot().motors[0].state.mode == MotorMode::None);
    CHECK(rig.session.phase() == Phase::Disconnected);

    rig.tap->clear();
    rig.session.disconnect();
    CHECK(rig.tap->entries().empty());
}

TEST_CASE("polling") {
    SUBCASE("disabled: no GetOutputState on the wire") {
        Rig rig;
        rig.session.connect();
        rig.clock.advance(5000ms);
        for (const auto& t : rig.tap->sent()) CHECK(t[1] != static_cast<std::uint8_t>(Opcode::GetOutputState));
        CHECK_FALSE(rig.session.last_telemetry());
    }
    SUBCASE("enabled: bounded turn observed through telemetry") {
        auto config = quiet_config();
        config.poll_interval = 200ms;
        Rig rig(config);
        std::vector<Millis> samples;
        rig.session.add_observer([&](const SessionEvent& e) {
            if (e.type == SessionEvent::Type::Telemetry) samples.push_back(e.telemetry->sample_time);
        });
        rig.session.connect();
        rig.session.send(encode_set_output_state(running(0, 50, 360), false));
        rig.clock.advance(1500ms);
        auto t = rig.session.last_telemetry();
        REQUIRE(t);
        CHECK(t->motors[0].counters.block_tacho >= 360);
        CHECK(t->motors[0].counters.block_tacho <= 364);
        CHECK(t->motors[0].state.run_state == RunState::Idle);
        CHECK(samples.size() == 7);
        CHECK(std::is_sorted(samples.begin(), samples.end()));
        CHECK(t->sequence > 0);
    }
}

TEST_CASE("single outstanding request under contention") {
    Rig rig;
    rig.session.connect();
    std::vector<std::jthread> threads;
    std::atomic<int> failures{0};
    for (int i = 0; i < 6; ++i) {
        threads.emplace_back([&, i] {
            for (int n = 0; n < 60; ++n) {
                try {
                    if (n % 3 == 0) {
                        rig.session.send(encode_message_write_text(static_cast<std::uint8_t>(i), "x"));
                    } else if (n % 2) {
                        rig.session.request(encode_get_battery_level());
                    } else {
                        rig.session.request(encode_get_output_state(static_cast<std::uint8_t>(i % 3)));
                    }
                } catch (const std::exception&) {
                    ++failures;
                }
            }
        });
    }
    threads.clear();
    CHECK(failures == 0);

    bool outstanding = false;
    std::uint8_t outstanding_op = 0;
    std::size_t requests = 0;
    for (const auto& e : rig.tap->entries()) {
        if (e.direction == Dir::Sent && e.telegram[0] == 0x00) {
            CHECK_FALSE(outstanding);
            outstanding = true;
            outstanding_op = e.telegram[1];
            ++requests;
        } else if (e.direction == Dir::Received) {
            CHECK(outstanding);
            CHECK(e.telegram[1] == outstanding_op);
            outstanding = false;
        }
    }
    CHECK(requests == 1 + 6 * 40);
}

TEST_CASE("fifo mutex serves in arrival order") {
    FifoMutex m;
    std::vector<int> order;
    m.lock();
    std::vector<std::jthread> waiters;
    for (int i = 0; i < 4; ++i) {
        waiters.emplace_back([&, i] {
            std::lock_guard g(m);
            order.push_back(i);
        });
        // let each waiter take its ticket before the next starts
        std::this_thread::sleep_for(20ms);
    }
    m.unlock();
    waiters.clear();
    CHECK(order == std::vector{0, 1, 2, 3});
}

TEST_CASE("operation by phase matrix never yields an illegal transition") {
    enum class Op { Connect, Request, Send, Poll, Disconnect, Tick, Drop };
    const Op ops[] = {Op::Connect, Op::Request, Op::Send, Op::Poll, Op::Disconnect, Op::Tick, Op::Drop};

    auto run = [](Rig& rig, Op op) {
        try {
            switch (op) {
                case Op::Connect:
                    rig.session.connect();
                    break;
                case Op::Request:
                    rig.session.request(encode_get_battery_level());
                    break;
                case Op::Send:
                    rig.session.send(coast_image(0));
                    break;
                case Op::Poll:
                    rig.session.poll_telemetry();
                    break;
                case Op::Disconnect:
                    rig.session.disconnect();
                    break;
                case Op::Tick:
                    rig.clock.advance(10ms);
                    break;
                case Op::Drop:
                    rig.host.close_connections("test");
                    rig.clock.advance(10ms);
                    break;
            }
        } catch (const SessionError&) {
        }
    };

    // every pair of operations from both stable phases, with and without reconnect
    for (bool reconnect : {false, true}) {
        for (bool start_connected : {false, true}) {
            for (auto a : ops) {
                for (auto b : ops) {
                    auto config = quiet_config();
                    config.reconnect = reconnect;
                    config.reconnect_initial = 10ms;
                    Rig rig(config);
                    Phase last = Phase::Disconnected;
                    bool illegal = false;
                    rig.session.add_observer([&](const SessionEvent& e) {
                        if (e.type != SessionEvent::Type::PhaseChanged) return;
                        illegal |= !is_legal_transition(last, e.phase);
                        last = e.phase;
                    });
                    if (start_connected) rig.session.connect();
                    run(rig, a);
                    run(rig, b);
                    rig.clock.advance(50ms);
                    CHECK_FALSE(illegal);
                    CHECK(rig.session.phase() == last);
                    CHECK((rig.session.phase() == Phase::Connected || rig.session.phase() == Phase::Disconnected));
                }
            }
        }
    }
}

TEST_CASE("operations during Connecting are rejected") {
    Rig rig;
    std::vector<SessionErrc> seen;
    SimulatedClock clock;
    std::unique_ptr<Session> s;
    s = std::make_unique<Session>(
        quiet_config(),
        [&](const transport::LinkEndpoint& e, Millis t) {
            CHECK(s->phase() == Phase::Connecting);
            seen.push_back(error_of([&] { s->request(encode_get_battery_level()); }));
            seen.push_back(error_of([&] { s->send(coast_image(0)); }));
            s->tick();
            return rig.open(e, t);
        },
        clock);
    s->connect();
    CHECK(s->phase() == Phase::Connected);
    CHECK(seen == std::vector{SessionErrc::NotConnected, SessionErrc::NotConnected});
}

TEST_CASE("reconnect backs off exponentially") {
    auto config = quiet_config();
    config.reconnect = true;
    Rig rig(config);
    std::vector<std::uint64_t> attempts;
    rig.session.add_observer([&](const SessionEvent& e) {
        if (e.type == SessionEvent::Type::PhaseChanged && e.phase == Phase::Connecting) attempts.push_back(rig.now_ms());
    });
    rig.session.connect();
    attempts.clear();

    rig.refuse = true;
    rig.host.close_connections("test");
    rig.clock.advance(10ms);
    CHECK(rig.session.phase() == Phase::Disconnected);
    const auto lost = rig.now_ms();
    rig.clock.advance(24000ms);
    REQUIRE(attempts.size() >= 6);
    std::vector<std::uint64_t> gaps{attempts[0] - lost};
    for (std::size_t i = 1; i < 6; ++i) gaps.push_back(attempts[i] - attempts[i - 1]);
    CHECK(gaps == std::vector<std::uint64_t>{500, 1000, 2000, 4000, 8000, 8000});

    rig.refuse = false;
    rig.clock.advance(8000ms);
    CHECK(rig.session.phase() == Phase::Connected);

    // a user disconnect cancels any pending reconnect
    rig.session.disconnect();
    rig.clock.advance(10000ms);
    CHECK(rig.session.phase() == Phase::Disconnected);
}

TEST_CASE("no reconnect by default") {
    Rig rig;
    rig.session.connect();
    rig.host.close_connections("test");
    rig.clock.advance(20000ms);
    CHECK(rig.session.phase() == Phase::Disconnected);
    CHECK(rig.opens == 1);
}

TEST_CASE("config file and environment precedence") {
    SessionConfig config;
    apply_config_json(config, nlohmann::json::parse(R"({"endpoint":"tcp:10.0.0.2:9000","request_timeout_ms":250,
        "poll_interval_ms":0,"keepalive":"off","reconnect":true,"unknown":1})"));
    CHECK(config.endpoint.to_string() == "tcp:10.0.0.2:9000");
    CHECK(config.request_timeout == 250ms);
    CHECK(config.poll_interval == 0ms);
    CHECK_FALSE(config.keepalive);
    CHECK(config.reconnect);

    std::map<std::string, std::string> env{{"BRICKPAD_LINK", "emu:"}, {"BRICKPAD_KEEPALIVE", "on"},
                                           {"BRICKPAD_POLL_INTERVAL_MS", "150"}};
    apply_environment(config, [&](const char* key) -> const char* {
        auto it = env.find(key);
        return it == env.end() ? nullptr : it->second.c_str();
    });
    CHECK(config.endpoint.scheme == transport::Scheme::Emulator);
    CHECK(config.keepalive);
    CHECK(config.poll_interval == 150ms);
    CHECK(config.request_timeout == 250ms);

    CHECK_THROWS_AS(apply_config_json(config, nlohmann::json::parse(R"({"keepalive":"maybe"})")),
                    std::invalid_argument);
    CHECK_THROWS_AS(apply_config_json(config, nlohmann::json::parse(R"({"request_timeout_ms":-1})")),
                    std::invalid_argument);
    CHECK_THROWS_AS(apply_environment(config, [](const char*) { return "12x"; }), std::exception);
}

TEST_CASE("background thread drives keep-alive in real time") {
    auto config = quiet_config();
    config.background = true;
    SteadyClock clock;
    // interval 1000 ms against a 2000 ms limit leaves room for scheduler jitter
    emulator::EmulatorHost host(sleepy(2000));
    Session s(
        config,
        [&](const auto& e, Millis t) {
            transport::OpenOptions o;
            o.loopback = [&] { return host.connect(); };
            return transport::open_link(e, t, o);
        },
        clock);
    s.connect();
    host.start_realtime();
    std::this_thread::sleep_for(3000ms);
    CHECK(s.phase() == Phase::Connected);
    host.stop_realtime();
    s.disconnect();
}
