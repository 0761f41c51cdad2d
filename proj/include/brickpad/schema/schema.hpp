#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <stop_token>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "brickpad/clock.hpp"
#include "brickpad/protocol/types.hpp"
#include "brickpad/session/session.hpp"

namespace brickpad::schema {

inline constexpr int kMaxRepeatDepth = 8;
inline constexpr std::size_t kMaxSourceBytes = 64 * 1024;

struct MotorOn {
    std::uint8_t port = 0;
    int power = 0;
    std::uint32_t degrees = 0;  // 0 = until told otherwise
    friend bool operator==(const MotorOn&, const MotorOn&) = default;
};

struct MotorBrake {
    std::uint8_t port = 0;
    friend bool operator==(const MotorBrake&, const MotorBrake&) = default;
};

struct MotorCoast {
    std::uint8_t port = 0;
    friend bool operator==(const MotorCoast&, const MotorCoast&) = default;
};

struct Wait {
    std::uint32_t ms = 0;
    friend bool operator==(const Wait&, const Wait&) = default;
};

struct Msg {
    std::uint8_t mailbox = 0;
    std::string text;
    friend bool operator==(const Msg&, const Msg&) = default;
};

struct SendRaw {
    Bytes bytes;
    friend bool operator==(const SendRaw&, const SendRaw&) = default;
};

struct Step;

struct Repeat {
    std::uint32_t count = 1;
    std::vector<Step> body;
    friend bool operator==(const Repeat&, const Repeat&);
};

struct Step {
    std::variant<MotorOn, MotorBrake, MotorCoast, Wait, Msg, SendRaw, Repeat> action;
    /// Source line, 0 when built in code. Not part of equality.
    int line = 0;

    friend bool operator==(const Step& a, const Step& b) { return a.action == b.action; }
};

inline bool operator==(const Repeat& a, const Repeat& b) { return a.count == b.count && a.body == b.body; }

struct Schema {
    std::string name;
    std::vector<Step> steps;
    friend bool operator==(const Schema& a, const Schema& b) { return a.steps == b.steps; }
};

class ParseError : public std::runtime_error {
public:
    ParseError(int line, const std::string& reason);
    int line() const noexcept { return line_; }
    const std::string& reason() const noexcept { return reason_; }

private:
    int line_;
    std::string reason_;
};

Schema parse_schema(std::string_view source, std::string name = "schema");
/// Reads a `.nxs` file. Throws ParseError (line 0) if it cannot be read.
Schema load_schema(const std::string& path);

/// Canonical text; parse_schema(print_schema(s)) == s.
std::string print_schema(const Schema& schema);
/// Canonical one-line form of a non-repeat step.
std::string describe(const Step& step);

/// Repeat blocks unrolled.
std::vector<Step> expand(const Schema& schema);

struct StepOutcome {
    std::size_t index = 0;
    std::string step;
    bool ok = false;
    std::optional<protocol::StatusCode> status;
    std::optional<std::string> reply_hex;
    std::string error;
};

enum class Failure { None, StepFailed, Aborted };

struct RunReport {
    std::string name;
    std::size_t total_steps = 0;
    std::size_t steps_executed = 0;
    Millis started{0};
    Millis finished{0};
    std::vector<StepOutcome> outcomes;
    bool aborted = false;
    Failure failure = Failure::None;
    std::optional<std::size_t> failed_index;
    std::string reason;

    bool succeeded() const noexcept { return !aborted; }
};

struct Progress {
    enum class Kind { Started, StepStarted, StepFinished, Finished };
    Kind kind = Kind::Started;
    std::size_t index = 0;
    std::size_t total = 0;
    std::string step;
    bool ok = true;
    std::string detail;
};

struct RunOptions {
    /// Run-state polling cadence while a bounded turn is in progress; also
    /// the longest stretch between stop checks.
    Millis poll_interval{100};
    /// Expected speed used for turn timeouts (the emulator's k).
    double degrees_per_second_per_power = 9.0;
    std::stop_token stop;
    std::function<void(const Progress&)> progress;
};

/// Executes the expanded steps in order. Never throws for step errors; the
/// report says what happened. Any abort coasts all three motors.
RunReport run_schema(const Schema& schema, session::Session& session, Clock& clock, const RunOptions& options = {});

/// 3 x expected + 1000 ms.
Millis turn_timeout(const MotorOn& step, double degrees_per_second_per_power);

}  // namespace brickpad::schema
