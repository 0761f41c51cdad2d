#include <cmath>
#include <random>

#include "brickpad/motorctl/motor.hpp"
#include "brickpad/protocol/hex.hpp"
#include "doctest.h"
#include "rig.hpp"

using namespace brickpad;
using namespace brickpad::motorctl;
using brickpad::testing::Rig;
using namespace std::chrono_literals;

namespace {

// The three canonical stop/turn images, transcribed by hand.
Bytes turn_image(std::uint8_t port, int power) {
    return {0x80, 0x04, port, static_cast<std::uint8_t>(static_cast<std::int8_t>(power)), 0x05, 0x01, 0x00, 0x20,
            0x00, 0x00, 0x00, 0x00};
}
const Bytes kBrakeA = protocol::parse_hex("80 04 00 00 07 01 00 20 00 00 00 00");
const Bytes kCoastA = protocol::parse_hex("80 04 00 00 00 00 00 00 00 00 00 00");

MotorErrc error_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const MotorError& e) {
        return e.code();
    }
    FAIL("expected MotorError");
    return MotorErrc::OutOfRange;
}

struct Bound {
    Rig rig;
    MotorHandle a{0};
    Bound() {
        rig.session.connect();
        a.bind(rig.session);
        rig.tap->clear();
    }
};

}  // namespace

TEST_CASE("labels and ports") {
    CHECK(MotorHandle(0).label() == "Rotate");
    CHECK(MotorHandle(1).label() == "Lift");
    CHECK(MotorHandle(2).label() == "Claw");
    CHECK_THROWS_AS(MotorHandle(3), MotorError);
    CHECK(port_from_letter('b') == 1);
    CHECK(port_from_letter('C') == 2);
    CHECK_FALSE(port_from_letter('D'));
    CHECK(port_letter(0) == 'A');

    MotorHandle m(0);
    CHECK(m.power() == 75);
    CHECK(m.brake_on_stop());
    CHECK_FALSE(m.is_running());
    CHECK(error_of([&] { m.set_power(0); }) == MotorErrc::OutOfRange);
    CHECK(error_of([&] { m.set_power(101); }) == MotorErrc::OutOfRange);
    m.set_label("Swing");
    CHECK(m.label() == "Swing");
}

TEST_CASE("unbound handles refuse every command") {
    MotorHandle m(0);
    for (auto fn : std::vector<std::function<void()>>{[&] { m.turn_cw(); }, [&] { m.turn_ccw(); },
                                                       [&] { m.turn(10, 0); }, [&] { m.stop(); },
                                                       [&] { m.relax(); }}) {
        CHECK(error_of(fn) == MotorErrc::NotBound);
    }
    try {
        m.turn_cw();
    } catch (const MotorError& e) {
        CHECK(std::string(e.what()) == "There is no motor connected to this control.");
    }
    try {
        m.turn(50, 360);
    } catch (const MotorError& e) {
        CHECK(std::string(e.what()) == "This motor must be connected to a brick.");
    }
}

TEST_CASE("turn_cw and turn_ccw images") {
    Bound b;
    b.a.turn_cw();
    REQUIRE(b.rig.tap->sent().size() == 1);
    CHECK(b.rig.tap->sent()[0] == turn_image(0, -75));
    CHECK(b.rig.tap->sent()[0][3] == 0xB5);
    CHECK(b.a.is_running());

    b.a.stop();
    b.rig.tap->clear();
    b.a.turn_ccw();
    REQUIRE(b.rig.tap->sent().size() == 1);
    CHECK(b.rig.tap->sent()[0][3] == 0x4B);
}

TEST_CASE("direction convention holds for every power") {
    Bound b;
    for (int p = 1; p <= 100; ++p) {
        b.a.set_power(p);
        b.rig.tap->clear();
        b.a.turn_cw();
        b.a.relax();
        b.a.turn_ccw();
        b.a.relax();
        auto sent = b.rig.tap->sent();
        REQUIRE(sent.size() == 4);
        CHECK(static_cast<std::int8_t>(sent[0][3]) == -p);
        CHECK(static_cast<std::int8_t>(sent[2][3]) == p);
    }
}

TEST_CASE("the running latch suppresses repeated turns") {
    Bound b;
    b.a.turn_cw();
    b.a.turn_cw();
    CHECK(b.rig.tap->sent().size() == 1);
    b.a.turn_ccw();
    CHECK(b.rig.tap->sent().size() == 1);

    // random call sequences: turn telegrams == cw/ccw calls made while idle
    std::mt19937 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        b.a.relax();
        b.rig.tap->clear();
        bool running = false;
        int expected_turns = 0;
        for (int i = 0; i < 20; ++i) {
            switch (rng() % 4) {
                case 0:
                case 1:
                    if (!running) ++expected_turns;
                    running = true;
                    (rng() % 2) ? b.a.turn_cw() : b.a.turn_ccw();
                    break;
                case 2:
                    running = false;
                    b.a.stop();
                    break;
                case 3:
                    running = false;
                    b.a.relax();
                    break;
            }
        }
        int turns = 0;
        for (const auto& t : b.rig.tap->sent()) turns += t[3] != 0;
        CHECK(turns == expected_turns);
    }
}

TEST_CASE("stop images") {
    SUBCASE("brake") {
        Bound b;
        b.a.turn_ccw();
        b.rig.tap->clear();
        b.a.stop();
        REQUIRE(b.rig.tap->sent().size() == 1);
        CHECK(b.rig.tap->sent()[0] == kBrakeA);
        CHECK_FALSE(b.a.is_running());
    }
    SUBCASE("coast") {
        Bound b;
        b.a.set_brake_on_stop(false);
        b.a.turn_ccw();
        b.rig.tap->clear();
        b.a.stop();
        REQUIRE(b.rig.tap->sent().size() == 1);
        CHECK(b.rig.tap->sent()[0] == kCoastA);
    }
    SUBCASE("not running") {
        Bound b;
        b.a.stop();
        CHECK(b.rig.tap->sent().empty());
    }
    SUBCASE("relax is unconditional") {
        Bound b;
        b.a.relax();
        b.a.relax();
        CHECK(b.rig.tap->sent() == std::vector{kCoastA, kCoastA});
        b.a.turn_cw();
        b.a.relax();
        CHECK(b.rig.tap->sent().back() == kCoastA);
        CHECK_FALSE(b.a.is_running());
    }
}

TEST_CASE("stop semantics on the emulator") {
    SUBCASE("brake halts on the next sub-tick") {
        Bound b;
        b.a.set_power(50);
        b.a.turn_ccw();
        b.rig.clock.advance(100ms);
        CHECK(b.rig.host.snapshot().motors[0].velocity == 450.0);
        b.a.stop();
        b.rig.clock.advance(10ms);
        CHECK(b.rig.host.snapshot().motors[0].velocity == 0.0);
    }
    SUBCASE("coast decays") {
        Bound b;
        b.a.set_power(50);
        b.a.set_brake_on_stop(false);
        b.a.turn_ccw();
        b.rig.clock.advance(100ms);
        b.a.stop();
        b.rig.clock.advance(300ms);
        CHECK(b.rig.host.snapshot().motors[0].velocity == doctest::Approx(450.0 * std::exp(-1.0)));
    }
    SUBCASE("cw then stop then ccw reverses the counter") {
        Bound b;
        b.a.turn_cw();
        b.rig.clock.advance(500ms);
        const double after_cw = b.rig.host.snapshot().motors[0].tacho_count;
        CHECK(after_cw < 0);
        b.a.stop();
        b.a.turn_ccw();
        b.rig.clock.advance(500ms);
        CHECK(b.rig.host.snapshot().motors[0].tacho_count > after_cw);
    }
}

TEST_CASE("bounded turns") {
    for (int speed : {50, -50}) {
        CAPTURE(speed);
        auto config = brickpad::testing::quiet_config();
        config.poll_interval = 200ms;
        Rig rig(config);
        rig.session.connect();
        MotorHandle a(0);
        a.bind(rig.session);
        rig.session.add_observer([&](const session::SessionEvent& e) {
            if (e.telemetry) a.observe(*e.telemetry);
        });
        a.turn(speed, 360);
        CHECK(a.is_running());
        rig.clock.advance(700ms);
        CHECK(a.is_running());
        rig.clock.advance(600ms);
        CHECK_FALSE(a.is_running());
        const double block = rig.host.snapshot().motors[0].block_tacho * (speed > 0 ? 1 : -1);
        CHECK(block >= 360.0);
        CHECK(block <= 364.5);
    }
}

TEST_CASE("stale telemetry does not clear the latch") {
    Bound b;
    b.a.turn(50, 360);
    session::Telemetry stale;
    stale.sequence = 0;
    stale.motors[0].state.run_state = protocol::RunState::Idle;
    b.a.observe(stale);
    CHECK(b.a.is_running());

    session::Telemetry fresh = stale;
    fresh.sequence = b.rig.session.telegrams_sent();
    b.a.observe(fresh);
    CHECK_FALSE(b.a.is_running());

    // unbounded turns are only cleared by stop/relax
    b.a.turn_ccw();
    b.a.observe(fresh);
    fresh.sequence = b.rig.session.telegrams_sent();
    b.a.observe(fresh);
    CHECK(b.a.is_running());
}

TEST_CASE("zero turn") {
    Bound b;
    b.a.turn(0, 0);
    CHECK(b.rig.tap->sent().size() == 1);
    b.rig.clock.advance(100ms);
    CHECK(b.rig.host.snapshot().motors[0].velocity == 0.0);
    CHECK(error_of([&] { b.a.turn(101, 0); }) == MotorErrc::OutOfRange);
}
