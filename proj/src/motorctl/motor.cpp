#include "brickpad/motorctl/motor.hpp"

namespace brickpad::motorctl {

namespace {

constexpr const char* kNoMotor = "There is no motor connected to this control.";
constexpr const char* kNoBrick = "This motor must be connected to a brick.";

}  // namespace

std::string_view default_label(std::uint8_t port) {
    switch (port) {
        case 0:
            return "Rotate";
        case 1:
            return "Lift";
        case 2:
            return "Claw";
    }
    throw MotorError(MotorErrc::OutOfRange, "motor port " + std::to_string(port) + " out of range");
}

std::optional<std::uint8_t> port_from_letter(char letter) noexcept {
    if (letter >= 'a' && letter <= 'c') return static_cast<std::uint8_t>(letter - 'a');
    if (letter >= 'A' && letter <= 'C') return static_cast<std::uint8_t>(letter - 'A');
    return std::nullopt;
}

char port_letter(std::uint8_t port) {
    if (port >= protocol::kMotorCount) {
        throw MotorError(MotorErrc::OutOfRange, "motor port " + std::to_string(port) + " out of range");
    }
    return static_cast<char>('A' + port);
}

MotorHandle::MotorHandle(std::uint8_t port, int power, bool brake_on_stop)
    : port_(port), label_(default_label(port)), power_(kDefaultPower), brake_on_stop_(brake_on_stop) {
    set_power(power);
}

void MotorHandle::unbind() noexcept {
    session_ = nullptr;
    running_ = false;
    bounded_ = false;
}

void MotorHandle::set_power(int power) {
    if (power < 1 || power > 100) {
        throw MotorError(MotorErrc::OutOfRange, "power must be 1..100, got " + std::to_string(power));
    }
    power_ = power;
}

session::Session& MotorHandle::require_session(const char* message) const {
    if (!session_) throw MotorError(MotorErrc::NotBound, message);
    return *session_;
}

void MotorHandle::run(int speed, std::uint32_t degrees) {
    auto& session = *session_;
    protocol::OutputState state{port_,
                                speed,
                                protocol::MotorMode::MotorOn | protocol::MotorMode::Regulated,
                                protocol::RegulationMode::MotorSpeed,
                                0,
                                protocol::RunState::Running,
                                degrees};
    session.send(protocol::encode_set_output_state(state, false));
    command_sequence_ = session.telegrams_sent();
    running_ = true;
    bounded_ = degrees > 0;
}

void MotorHandle::turn_cw() {
    require_session(kNoMotor);
    if (running_) return;
    run(-power_, 0);
}

void MotorHandle::turn_ccw() {
    require_session(kNoMotor);
    if (running_) return;
    run(power_, 0);
}

void MotorHandle::turn(int speed, std::uint32_t degrees) {
    require_session(kNoBrick);
    if (speed < -100 || speed > 100) {
        throw MotorError(MotorErrc::OutOfRange, "speed must be -100..100, got " + std::to_string(speed));
    }
    run(speed, degrees);
}

void MotorHandle::stop() {
    auto& session = require_session(kNoMotor);
    if (!running_) return;
    session.send(brake_on_stop_ ? protocol::brake_image(port_) : protocol::coast_image(port_));
    running_ = false;
    bounded_ = false;
}

void MotorHandle::relax() {
    auto& session = require_session(kNoMotor);
    session.send(protocol::coast_image(port_));
    running_ = false;
    bounded_ = false;
}

void MotorHandle::observe(const session::Telemetry& telemetry) noexcept {
    if (!running_ || !bounded_ || telemetry.sequence < command_sequence_) return;
    if (telemetry.motors[port_].state.run_state == protocol::RunState::Idle) {
        running_ = false;
        bounded_ = false;
    }
}

}  // namespace brickpad::motorctl
