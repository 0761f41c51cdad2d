#include "brickpad/schema/schema.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "brickpad/protocol/codec.hpp"
#include "brickpad/protocol/hex.hpp"

namespace brickpad::schema {

ParseError::ParseError(int line, const std::string& reason)
    : std::runtime_error("line " + std::to_string(line) + ": " + reason), line_(line), reason_(reason) {}

namespace {

struct Token {
    std::string text;
    bool quoted = false;
};

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::vector<Token> tokenize(std::string_view line, int line_no) {
    std::vector<Token> tokens;
    std::size_t i = 0;
    while (i < line.size()) {
        const char c = line[i];
        if (c == ' ' || c == '\t' || c == '\r') {
            ++i;
        } else if (c == '#') {
            break;
        } else if (c == '"') {
            Token t{{}, true};
            ++i;
            bool closed = false;
            while (i < line.size()) {
                char d = line[i++];
                if (d == '"') {
                    closed = true;
                    break;
                }
                if (d == '\\') {
                    if (i >= line.size() || (line[i] != '"' && line[i] != '\\')) {
                        throw ParseError(line_no, "unsupported escape in quoted text");
                    }
                    d = line[i++];
                }
                if (static_cast<unsigned char>(d) < 0x20 || static_cast<unsigned char>(d) > 0x7E) {
                    throw ParseError(line_no, "message text must be printable ASCII");
                }
                t.text.push_back(d);
            }
            if (!closed) throw ParseError(line_no, "unterminated quoted text");
            tokens.push_back(std::move(t));
        } else {
            Token t;
            while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r' && line[i] != '#' &&
                   line[i] != '"') {
                t.text.push_back(line[i++]);
            }
            tokens.push_back(std::move(t));
        }
    }
    return tokens;
}

long long parse_int(const Token& t, int line_no, const char* what, long long lo, long long hi) {
    if (t.quoted) throw ParseError(line_no, std::string(what) + " must be a number");
    std::string_view s = t.text;
    if (!s.empty() && s[0] == '+') s.remove_prefix(1);
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
        throw ParseError(line_no, std::string(what) + " must be an integer, got '" + t.text + "'");
    }
    if (v < lo || v > hi) {
        throw ParseError(line_no, std::string(what) + " " + std::to_string(v) + " out of range " +
                                      std::to_string(lo) + ".." + std::to_string(hi));
    }
    return v;
}

std::uint8_t parse_port(const Token& t, int line_no) {
    const auto p = lower(t.text);
    if (t.quoted || p.size() != 1 || p[0] < 'a' || p[0] > 'c') {
        throw ParseError(line_no, "bad port '" + t.text + "', expected A, B or C");
    }
    return static_cast<std::uint8_t>(p[0] - 'a');
}

void expect_count(const std::vector<Token>& tokens, std::size_t n, int line_no, const char* usage) {
    if (tokens.size() != n) throw ParseError(line_no, std::string("expected: ") + usage);
}

Step parse_motor(const std::vector<Token>& tokens, int line_no) {
    constexpr const char* usage = "motor <A|B|C> on <power> [degrees <n>] | brake | coast";
    if (tokens.size() < 3) throw ParseError(line_no, std::string("expected: ") + usage);
    const auto port = parse_port(tokens[1], line_no);
    const auto action = lower(tokens[2].text);
    if (action == "brake") {
        expect_count(tokens, 3, line_no, usage);
        return Step{MotorBrake{port}, line_no};
    }
    if (action == "coast") {
        expect_count(tokens, 3, line_no, usage);
        return Step{MotorCoast{port}, line_no};
    }
    if (action != "on") throw ParseError(line_no, "unknown motor action '" + tokens[2].text + "'");
    if (tokens.size() != 4 && tokens.size() != 6) throw ParseError(line_no, std::string("expected: ") + usage);
    MotorOn on{port, static_cast<int>(parse_int(tokens[3], line_no, "power", -100, 100)), 0};
    if (tokens.size() == 6) {
        if (lower(tokens[4].text) != "degrees") {
            throw ParseError(line_no, "expected 'degrees', got '" + tokens[4].text + "'");
        }
        on.degrees = static_cast<std::uint32_t>(parse_int(tokens[5], line_no, "degrees", 0, 0xFFFFFFFF));
        if (on.degrees > 0 && on.power == 0) {
            throw ParseError(line_no, "a bounded turn needs non-zero power");
        }
    }
    return Step{on, line_no};
}

Step parse_msg(const std::vector<Token>& tokens, int line_no) {
    expect_count(tokens, 3, line_no, "msg <mailbox> \"<text>\"");
    const auto mailbox =
        static_cast<std::uint8_t>(parse_int(tokens[1], line_no, "mailbox", 0, protocol::kMailboxCount - 1));
    if (!tokens[2].quoted) throw ParseError(line_no, "message text must be in double quotes");
    try {
        protocol::encode_message_write_text(mailbox, tokens[2].text);
    } catch (const protocol::CodecError& e) {
        throw ParseError(line_no, e.what());
    }
    return Step{Msg{mailbox, tokens[2].text}, line_no};
}

Step parse_send(const std::vector<Token>& tokens, int line_no) {
    if (tokens.size() < 2) throw ParseError(line_no, "expected: send <hex bytes>");
    std::string joined;
    for (std::size_t i = 1; i < tokens.size(); ++i) {
        if (tokens[i].quoted) throw ParseError(line_no, "send takes hex bytes, not text");
        joined += tokens[i].text + " ";
    }
    Bytes bytes;
    try {
        bytes = protocol::parse_hex(joined);
        if (bytes.size() > protocol::kMaxTelegramSize) {
            throw ParseError(line_no, "telegram longer than 64 bytes");
        }
        protocol::decode_telegram(bytes);
    } catch (const protocol::CodecError& e) {
        throw ParseError(line_no, e.what());
    }
    return Step{SendRaw{std::move(bytes)}, line_no};
}

void print_steps(std::ostringstream& out, const std::vector<Step>& steps, int depth) {
    const std::string indent(static_cast<std::size_t>(depth) * 2, ' ');
    for (const auto& step : steps) {
        if (const auto* r = std::get_if<Repeat>(&step.action)) {
            out << indent << "repeat " << r->count << '\n';
            print_steps(out, r->body, depth + 1);
            out << indent << "end\n";
        } else {
            out << indent << describe(step) << '\n';
        }
    }
}

void expand_into(const std::vector<Step>& steps, std::vector<Step>& out) {
    for (const auto& step : steps) {
        if (const auto* r = std::get_if<Repeat>(&step.action)) {
            for (std::uint32_t i = 0; i < r->count; ++i) expand_into(r->body, out);
        } else {
            out.push_back(step);
        }
    }
}

}  // namespace

Schema parse_schema(std::string_view source, std::string name) {
    if (source.size() > kMaxSourceBytes) throw ParseError(0, "schema larger than 64 KiB");

    struct Frame {
        std::vector<Step> steps;
        std::uint32_t count = 0;
        int line = 0;
    };
    std::vector<Frame> stack(1);

    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= source.size()) {
        auto nl = source.find('\n', pos);
        if (nl == std::string_view::npos) nl = source.size();
        const auto line = source.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;

        const auto tokens = tokenize(line, line_no);
        if (tokens.empty()) continue;
        if (tokens[0].quoted) throw ParseError(line_no, "expected a keyword");
        const auto keyword = lower(tokens[0].text);

        if (keyword == "motor") {
            stack.back().steps.push_back(parse_motor(tokens, line_no));
        } else if (keyword == "wait") {
            expect_count(tokens, 2, line_no, "wait <ms>");
            stack.back().steps.push_back(
                Step{Wait{static_cast<std::uint32_t>(parse_int(tokens[1], line_no, "wait", 0, 0xFFFFFFFF))},
                     line_no});
        } else if (keyword == "msg") {
            stack.back().steps.push_back(parse_msg(tokens, line_no));
        } else if (keyword == "send") {
            stack.back().steps.push_back(parse_send(tokens, line_no));
        } else if (keyword == "repeat") {
            expect_count(tokens, 2, line_no, "repeat <n>");
            if (static_cast<int>(stack.size()) > kMaxRepeatDepth) {
                throw ParseError(line_no, "repeat nested deeper than " + std::to_string(kMaxRepeatDepth));
            }
            const auto count = static_cast<std::uint32_t>(parse_int(tokens[1], line_no, "repeat count", 1, 1'000'000));
            stack.push_back(Frame{{}, count, line_no});
        } else if (keyword == "end") {
            expect_count(tokens, 1, line_no, "end");
            if (stack.size() == 1) throw ParseError(line_no, "'end' without 'repeat'");
            auto frame = std::move(stack.back());
            stack.pop_back();
            if (frame.steps.empty()) throw ParseError(frame.line, "empty repeat block");
            stack.back().steps.push_back(Step{Repeat{frame.count, std::move(frame.steps)}, frame.line});
        } else {
            throw ParseError(line_no, "unknown keyword '" + tokens[0].text + "'");
        }
    }
    if (stack.size() > 1) throw ParseError(stack.back().line, "unterminated repeat");
    return Schema{std::move(name), std::move(stack.front().steps)};
}

Schema load_schema(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(0, "cannot read " + path);
    std::ostringstream text;
    text << in.rdbuf();
    auto name = path;
    if (auto slash = name.find_last_of('/'); slash != std::string::npos) name.erase(0, slash + 1);
    if (name.size() > 4 && name.ends_with(".nxs")) name.resize(name.size() - 4);
    return parse_schema(text.str(), name);
}

std::string describe(const Step& step) {
    struct Visitor {
        std::string operator()(const MotorOn& s) const {
            std::string out = std::string("motor ") + static_cast<char>('A' + s.port) + " on " + std::to_string(s.power);
            if (s.degrees) out += " degrees " + std::to_string(s.degrees);
            return out;
        }
        std::string operator()(const MotorBrake& s) const {
            return std::string("motor ") + static_cast<char>('A' + s.port) + " brake";
        }
        std::string operator()(const MotorCoast& s) const {
            return std::string("motor ") + static_cast<char>('A' + s.port) + " coast";
        }
        std::string operator()(const Wait& s) const { return "wait " + std::to_string(s.ms); }
        std::string operator()(const Msg& s) const {
            std::string out = "msg " + std::to_string(s.mailbox) + " \"";
            for (char c : s.text) {
                if (c == '"' || c == '\\') out.push_back('\\');
                out.push_back(c);
            }
            return out + "\"";
        }
        std::string operator()(const SendRaw& s) const { return "send " + protocol::format_hex(s.bytes); }
        std::string operator()(const Repeat& s) const { return "repeat " + std::to_string(s.count); }
    };
    return std::visit(Visitor{}, step.action);
}

std::string print_schema(const Schema& schema) {
    std::ostringstream out;
    print_steps(out, schema.steps, 0);
    return out.str();
}

std::vector<Step> expand(const Schema& schema) {
    std::vector<Step> out;
    expand_into(schema.steps, out);
    return out;
}

Millis turn_timeout(const MotorOn& step, double degrees_per_second_per_power) {
    if (step.power == 0 || step.degrees == 0) return Millis(1000);
    const double expected_ms = step.degrees / (degrees_per_second_per_power * std::abs(step.power)) * 1000.0;
    return Millis(static_cast<Millis::rep>(std::ceil(3.0 * expected_ms))) + Millis(1000);
}

namespace {

class StepFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class StopRequested : public std::exception {};

class Runner {
public:
    Runner(session::Session& session, Clock& clock, const RunOptions& options)
        : session_(session), clock_(clock), options_(options) {}

    void execute(const Step& step, StepOutcome& outcome) {
        std::visit([&](const auto& s) { run(s, outcome); }, step.action);
    }

    void check_stop() const {
        if (options_.stop.stop_requested()) throw StopRequested{};
    }

    /// Sleeps in slices no longer than the poll interval, checking for stop.
    void pause(Millis duration) {
        const auto slice = std::max(options_.poll_interval, Millis(1));
        while (duration.count() > 0) {
            check_stop();
            const auto d = std::min(duration, slice);
            clock_.sleep_for(d);
            duration -= d;
        }
        check_stop();
    }

    void coast_all() noexcept {
        for (std::uint8_t port = 0; port < protocol::kMotorCount; ++port) {
            try {
                session_.send(protocol::coast_image(port));
            } catch (const std::exception&) {
                // the link may be the reason we are aborting
            }
        }
    }

private:
    void run(const MotorOn& s, StepOutcome&) {
        protocol::OutputState state{s.port,
                                    s.power,
                                    protocol::MotorMode::MotorOn | protocol::MotorMode::Regulated,
                                    protocol::RegulationMode::MotorSpeed,
                                    0,
                                    protocol::RunState::Running,
                                    s.degrees};
        session_.send(protocol::encode_set_output_state(state, false));
        if (s.degrees == 0) return;

        const auto deadline = clock_.now() + turn_timeout(s, options_.degrees_per_second_per_power);
        for (;;) {
            pause(options_.poll_interval);
            auto reply = session_.request(protocol::encode_get_output_state(s.port));
            if (!reply.ok()) {
                throw StepFailure("GetOutputState returned " + std::string(protocol::to_string(reply.status)));
            }
            auto reading = protocol::decode_output_state_reply(reply.payload);
            if (reading.state.run_state == protocol::RunState::Idle) return;
            if (clock_.now() >= deadline) {
                throw StepFailure("turn did not finish within " +
                                  std::to_string(turn_timeout(s, options_.degrees_per_second_per_power).count()) +
                                  " ms");
            }
        }
    }

    void run(const MotorBrake& s, StepOutcome&) { session_.send(protocol::brake_image(s.port)); }
    void run(const MotorCoast& s, StepOutcome&) { session_.send(protocol::coast_image(s.port)); }
    void run(const Wait& s, StepOutcome&) { pause(Millis(s.ms)); }
    void run(const Msg& s, StepOutcome&) { session_.send(protocol::encode_message_write_text(s.mailbox, s.text)); }

    void run(const SendRaw& s, StepOutcome& outcome) {
        auto telegram = protocol::decode_telegram(s.bytes);
        if (!telegram.wants_reply()) {
            session_.send(telegram);
            return;
        }
        auto reply = session_.request(telegram);
        outcome.status = reply.status;
        outcome.reply_hex = protocol::format_hex(protocol::encode_reply(telegram.opcode, reply.status, reply.payload));
    }

    void run(const Repeat&, StepOutcome&) {}

    session::Session& session_;
    Clock& clock_;
    const RunOptions& options_;
};

}  // namespace

RunReport run_schema(const Schema& schema, session::Session& session, Clock& clock, const RunOptions& options) {
    const auto steps = expand(schema);
    RunReport report;
    report.name = schema.name;
    report.total_steps = steps.size();
    report.started = clock.now();

    auto emit = [&](Progress p) {
        if (options.progress) options.progress(p);
    };
    emit(Progress{Progress::Kind::Started, 0, steps.size(), {}, true, schema.name});

    Runner runner(session, clock, options);
    auto abort = [&](Failure failure, std::size_t index, std::string reason) {
        report.aborted = true;
        report.failure = failure;
        report.failed_index = index;
        report.reason = std::move(reason);
        runner.coast_all();
    };

    for (std::size_t i = 0; i < steps.size(); ++i) {
        StepOutcome outcome;
        outcome.index = i;
        outcome.step = describe(steps[i]);
        try {
            runner.check_stop();
            emit(Progress{Progress::Kind::StepStarted, i, steps.size(), outcome.step, true, {}});
            runner.execute(steps[i], outcome);
            outcome.ok = true;
        } catch (const StopRequested&) {
            outcome.error = "stopped by user";
            report.outcomes.push_back(outcome);
            abort(Failure::Aborted, i, "stopped by user");
            break;
        } catch (const std::exception& e) {
            outcome.error = e.what();
            report.outcomes.push_back(outcome);
            emit(Progress{Progress::Kind::StepFinished, i, steps.size(), outcome.step, false, outcome.error});
            abort(Failure::StepFailed, i, "step " + std::to_string(i + 1) + " (" + outcome.step + "): " + e.what());
            break;
        }
        report.outcomes.push_back(outcome);
        ++report.steps_executed;
        emit(Progress{Progress::Kind::StepFinished, i, steps.size(), outcome.step, true,
                      outcome.reply_hex.value_or("")});
    }

    report.finished = clock.now();
    emit(Progress{Progress::Kind::Finished, report.steps_executed, steps.size(), {}, !report.aborted, report.reason});
    return report;
}

}  // namespace brickpad::schema
