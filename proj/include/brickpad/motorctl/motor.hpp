#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "brickpad/session/session.hpp"

namespace brickpad::motorctl {

enum class MotorErrc { NotBound, OutOfRange };

class MotorError : public std::runtime_error {
public:
    MotorError(MotorErrc code, const std::string& message) : std::runtime_error(message), code_(code) {}
    MotorErrc code() const noexcept { return code_; }

private:
    MotorErrc code_;
};

inline constexpr int kDefaultPower = 75;

/// "Rotate", "Lift", "Claw" for ports 0..2.
std::string_view default_label(std::uint8_t port);
/// 'A'..'C' (either case) to 0..2.
std::optional<std::uint8_t> port_from_letter(char letter) noexcept;
char port_letter(std::uint8_t port);

/// One crane motor. Not thread-safe; callers serialize access per handle.
class MotorHandle {
public:
    explicit MotorHandle(std::uint8_t port, int power = kDefaultPower, bool brake_on_stop = true);

    void bind(session::Session& session) noexcept { session_ = &session; }
    void unbind() noexcept;
    bool bound() const noexcept { return session_ != nullptr; }

    std::uint8_t port() const noexcept { return port_; }
    const std::string& label() const noexcept { return label_; }
    void set_label(std::string label) { label_ = std::move(label); }
    int power() const noexcept { return power_; }
    /// 1..100, otherwise OutOfRange.
    void set_power(int power);
    bool brake_on_stop() const noexcept { return brake_on_stop_; }
    void set_brake_on_stop(bool brake) noexcept { brake_on_stop_ = brake; }
    bool is_running() const noexcept { return running_; }

    /// Negative power; ignored while running.
    void turn_cw();
    /// Positive power; ignored while running.
    void turn_ccw();
    /// speed -100..100; degrees 0 runs until stopped.
    void turn(int speed, std::uint32_t degrees);
    /// Brake or coast depending on brake_on_stop; ignored unless running.
    void stop();
    /// Coast regardless of state.
    void relax();

    /// Clears the latch once a bounded turn is seen to have finished.
    void observe(const session::Telemetry& telemetry) noexcept;

private:
    session::Session& require_session(const char* message) const;
    void run(int speed, std::uint32_t degrees);

    std::uint8_t port_;
    std::string label_;
    int power_;
    bool brake_on_stop_;
    bool running_ = false;
    bool bounded_ = false;
    std::uint64_t command_sequence_ = 0;
    session::Session* session_ = nullptr;
};

}  // namespace brickpad::motorctl
