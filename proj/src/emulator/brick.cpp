#include "brickpad/emulator/brick.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "brickpad/protocol/little_endian.hpp"

namespace brickpad::emulator {

using protocol::MotorMode;
using protocol::Opcode;
using protocol::RunState;
using protocol::StatusCode;

namespace {

bool drives(const protocol::OutputState& s) {
    return protocol::has_flag(s.mode, MotorMode::MotorOn) && s.run_state != RunState::Idle;
}

std::int32_t whole_degrees(std::int64_t mdeg) { return static_cast<std::int32_t>(mdeg / 1000); }

nlohmann::json state_json(const protocol::OutputState& s) {
    return {{"port", s.port},
            {"power", s.power},
            {"mode", static_cast<int>(s.mode)},
            {"regulation", static_cast<int>(s.regulation)},
            {"turn_ratio", s.turn_ratio},
            {"run_state", std::string(protocol::to_string(s.run_state))},
            {"tacho_limit", s.tacho_limit}};
}

}  // namespace

protocol::OutputCounters MotorSnapshot::counters() const {
    return {static_cast<std::int32_t>(std::trunc(tacho_count)), static_cast<std::int32_t>(std::trunc(block_tacho)),
            static_cast<std::int32_t>(std::trunc(rotation_count))};
}

VirtualBrick::VirtualBrick(BrickConfig config) : config_(config) {
    for (std::size_t i = 0; i < motors_.size(); ++i) {
        motors_[i].state.port = static_cast<std::uint8_t>(i);
    }
}

std::optional<Bytes> VirtualBrick::handle_telegram(std::span<const std::uint8_t> telegram) {
    last_rx_ms_ = clock_ms_;
    if (asleep_) {
        asleep_ = false;
        emit(pending_, "woke");
    }
    if (telegram.size() < 2) {
        emit(pending_, "dropped", {{"reason", "short telegram"}, {"size", telegram.size()}});
        return std::nullopt;
    }
    auto kind = protocol::kind_from_byte(telegram[0]);
    if (kind != protocol::TelegramKind::DirectWithReply && kind != protocol::TelegramKind::DirectNoReply) {
        emit(pending_, "dropped", {{"reason", "not a direct command"}, {"kind", telegram[0]}});
        return std::nullopt;
    }
    const std::uint8_t opcode = telegram[1];
    Bytes reply_body;
    auto status = dispatch(opcode, telegram.subspan(2), reply_body);
    if (status != StatusCode::Ok) {
        emit(pending_, "status", {{"opcode", opcode}, {"status", static_cast<int>(status)}});
    }
    if (kind != protocol::TelegramKind::DirectWithReply) {
        return std::nullopt;
    }
    if (status != StatusCode::Ok && status != StatusCode::MailboxEmpty) {
        reply_body.clear();
    }
    return protocol::encode_reply(opcode, status, reply_body);
}

StatusCode VirtualBrick::dispatch(std::uint8_t opcode, std::span<const std::uint8_t> body, Bytes& reply) {
    auto op = protocol::opcode_from_byte(opcode);
    if (!op) {
        return StatusCode::UnknownCommand;
    }
    switch (*op) {
        case Opcode::SetOutputState:
            return set_output_state(body);
        case Opcode::GetOutputState:
            return get_output_state(body, reply);
        case Opcode::SetInputMode:
            return set_input_mode(body);
        case Opcode::GetInputValues:
            return get_input_values(body, reply);
        case Opcode::MessageWrite:
            return message_write(body);
        case Opcode::MessageRead:
            return message_read(body, reply);
        case Opcode::ResetMotorPosition:
            return reset_motor_position(body);
        case Opcode::PlayTone:
            return play_tone(body);
        case Opcode::GetBatteryLevel:
            if (!body.empty()) return StatusCode::BadArguments;
            protocol::put_u16(reply, config_.battery_mv);
            return StatusCode::Ok;
        case Opcode::KeepAlive:
            if (!body.empty()) return StatusCode::BadArguments;
            protocol::put_u32(reply, config_.sleep_limit_ms);
            return StatusCode::Ok;
    }
    return StatusCode::UnknownCommand;
}

StatusCode VirtualBrick::set_output_state(std::span<const std::uint8_t> body) {
    if (body.size() != 10) return StatusCode::BadArguments;
    protocol::ByteReader r(body);
    protocol::OutputState s;
    s.port = r.u8();
    s.power = protocol::clamp_percent(r.s8());
    auto mode = r.u8();
    auto regulation = r.u8();
    s.turn_ratio = protocol::clamp_percent(r.s8());
    auto run_state = r.u8();
    s.tacho_limit = r.u32();
    if (s.port >= protocol::kMotorCount && s.port != protocol::kAllMotors) return StatusCode::OutOfRange;
    if ((mode & ~protocol::kMotorModeMask) != 0 || !protocol::is_valid_regulation(regulation) ||
        !protocol::is_valid_run_state(run_state)) {
        return StatusCode::BadArguments;
    }
    s.mode = static_cast<MotorMode>(mode);
    s.regulation = static_cast<protocol::RegulationMode>(regulation);
    s.run_state = static_cast<RunState>(run_state);

    if (s.port == protocol::kAllMotors) {
        for (std::uint8_t p = 0; p < protocol::kMotorCount; ++p) apply_output_state(p, s);
    } else {
        apply_output_state(s.port, s);
    }
    return StatusCode::Ok;
}

void VirtualBrick::apply_output_state(std::uint8_t port, const protocol::OutputState& state) {
    auto& m = motors_[port];
    m.state = state;
    m.state.port = port;
    // only a command that drives the shaft starts a new block; coasting keeps the count
    if (protocol::has_flag(state.mode, protocol::MotorMode::MotorOn) && state.power != 0) m.block_mdeg = 0;
    emit(pending_, "output_state", state_json(m.state));
}

StatusCode VirtualBrick::get_output_state(std::span<const std::uint8_t> body, Bytes& reply) {
    if (body.size() != 1) return StatusCode::BadArguments;
    if (body[0] >= protocol::kMotorCount) return StatusCode::OutOfRange;
    const auto& m = motors_[body[0]];
    protocol::OutputCounters c{whole_degrees(m.tacho_mdeg), whole_degrees(m.block_mdeg),
                               whole_degrees(m.rotation_mdeg)};
    reply = protocol::encode_output_state_reply(m.state, c);
    return StatusCode::Ok;
}

StatusCode VirtualBrick::set_input_mode(std::span<const std::uint8_t> body) {
    if (body.size() != 3) return StatusCode::BadArguments;
    if (body[0] >= protocol::kSensorCount) return StatusCode::OutOfRange;
    sensors_[body[0]].sensor_type = body[1];
    sensors_[body[0]].sensor_mode = body[2];
    emit(pending_, "input_mode", {{"port", body[0]}, {"type", body[1]}, {"mode", body[2]}});
    return StatusCode::Ok;
}

StatusCode VirtualBrick::get_input_values(std::span<const std::uint8_t> body, Bytes& reply) {
    if (body.size() != 1) return StatusCode::BadArguments;
    if (body[0] >= protocol::kSensorCount) return StatusCode::OutOfRange;
    const auto& sensor = sensors_[body[0]];
    protocol::InputValues v;
    v.port = body[0];
    v.sensor_type = sensor.sensor_type;
    v.sensor_mode = sensor.sensor_mode;
    auto after = std::upper_bound(sensor.trace.begin(), sensor.trace.end(), clock_ms_,
                                  [](std::uint64_t t, const TracePoint& p) { return t < p.time_ms; });
    if (after != sensor.trace.begin()) {
        const auto& point = *std::prev(after);
        v.valid = true;
        v.raw = point.raw;
        v.normalized = point.raw;
        v.scaled = point.scaled;
        v.calibrated_value = point.scaled;
    }
    reply = protocol::encode_input_values_reply(v);
    return StatusCode::Ok;
}

StatusCode VirtualBrick::message_write(std::span<const std::uint8_t> body) {
    if (body.size() < 3) return StatusCode::BadArguments;
    const std::uint8_t mailbox = body[0];
    const std::size_t size = body[1];
    if (mailbox >= protocol::kMailboxCount) return StatusCode::OutOfRange;
    if (size == 0 || size != body.size() - 2 || body.back() != 0x00 || size > protocol::kMaxMessageData + 1) {
        return StatusCode::BadArguments;
    }
    auto& box = mailboxes_[mailbox];
    box.emplace_back(body.begin() + 2, body.end() - 1);
    if (box.size() > config_.mailbox_capacity) {
        box.pop_front();
        emit(pending_, "mailbox_overflow", {{"mailbox", mailbox}});
    }
    emit(pending_, "message", {{"mailbox", mailbox}, {"size", size - 1}});
    return StatusCode::Ok;
}

StatusCode VirtualBrick::message_read(std::span<const std::uint8_t> body, Bytes& reply) {
    if (body.size() != 3) return StatusCode::BadArguments;
    const std::uint8_t remote = body[0];
    const std::uint8_t local = body[1];
    if (remote >= protocol::kMailboxCount) return StatusCode::OutOfRange;
    auto& box = mailboxes_[remote];
    if (box.empty()) {
        reply = protocol::encode_message_read_reply(local, {});
        return StatusCode::MailboxEmpty;
    }
    reply = protocol::encode_message_read_reply(local, box.front());
    if (body[2] != 0) box.pop_front();
    return StatusCode::Ok;
}

StatusCode VirtualBrick::reset_motor_position(std::span<const std::uint8_t> body) {
    if (body.size() != 2) return StatusCode::BadArguments;
    const std::uint8_t port = body[0];
    if (port >= protocol::kMotorCount && port != protocol::kAllMotors) return StatusCode::OutOfRange;
    if (body[1] > 1) return StatusCode::BadArguments;
    for (std::uint8_t p = 0; p < protocol::kMotorCount; ++p) {
        if (port != protocol::kAllMotors && p != port) continue;
        if (body[1] == 0) {
            motors_[p].rotation_mdeg = 0;
        } else {
            motors_[p].block_mdeg = 0;
        }
    }
    emit(pending_, "reset_position", {{"port", port}, {"relative", body[1]}});
    return StatusCode::Ok;
}

StatusCode VirtualBrick::play_tone(std::span<const std::uint8_t> body) {
    if (body.size() != 4) return StatusCode::BadArguments;
    protocol::ByteReader r(body);
    auto frequency = r.u16();
    auto duration = r.u16();
    emit(pending_, "tone", {{"frequency_hz", frequency}, {"duration_ms", duration}});
    return StatusCode::Ok;
}

std::vector<BrickEvent> VirtualBrick::step(std::uint32_t dt_ms) {
    std::vector<BrickEvent> events;
    const std::uint32_t subtick = std::max<std::uint32_t>(config_.max_subtick_ms, 1);
    while (dt_ms > 0) {
        const auto dt = std::min(dt_ms, subtick);
        dt_ms -= dt;
        for (std::size_t i = 0; i < motors_.size(); ++i) {
            advance_motor(i, motors_[i], dt, events);
        }
        clock_ms_ += dt;
        if (!asleep_ && config_.sleep_limit_ms > 0 && clock_ms_ - last_rx_ms_ > config_.sleep_limit_ms) {
            asleep_ = true;
            for (auto& m : motors_) {
                auto port = m.state.port;
                m.state = protocol::coast_state(port);
                m.velocity = 0.0;
            }
            emit(events, "BrickSlept", {{"idle_ms", clock_ms_ - last_rx_ms_}});
        }
    }
    return events;
}

void VirtualBrick::advance_motor(std::size_t index, Motor& m, std::uint32_t dt_ms, std::vector<BrickEvent>& events) {
    const bool driven = drives(m.state);
    const bool coasting = !protocol::has_flag(m.state.mode, MotorMode::MotorOn);
    if (driven) {
        m.velocity = config_.degrees_per_second_per_power * m.state.power;
    } else if (!coasting) {
        m.velocity = 0.0;
    }

    // deg/s * ms = millidegrees
    const auto delta = static_cast<std::int64_t>(std::llround(m.velocity * dt_ms));
    m.tacho_mdeg += delta;
    m.block_mdeg += delta;
    m.rotation_mdeg += delta;

    if (coasting && m.velocity != 0.0) {
        m.velocity *= std::exp(-(dt_ms / 1000.0) / config_.coast_time_constant_s);
        if (std::abs(m.velocity) < config_.coast_cutoff_deg_per_s) {
            m.velocity = 0.0;
        }
    }

    if (driven && m.state.tacho_limit > 0 &&
        std::llabs(m.block_mdeg) >= static_cast<std::int64_t>(m.state.tacho_limit) * 1000) {
        m.velocity = 0.0;
        m.state.run_state = RunState::Idle;
        emit(events, "motor_halted",
             {{"port", index}, {"block_tacho", whole_degrees(m.block_mdeg)}, {"t_halt", clock_ms_ + dt_ms}});
    }
}

void VirtualBrick::load_sensor_trace(std::uint8_t port, std::vector<TracePoint> trace) {
    if (port >= protocol::kSensorCount) {
        throw EmulatorError(EmulatorErrc::BadPort, "sensor port " + std::to_string(port));
    }
    for (std::size_t i = 1; i < trace.size(); ++i) {
        if (trace[i].time_ms <= trace[i - 1].time_ms) {
            throw EmulatorError(EmulatorErrc::UnsortedTrace,
                                "trace times must be strictly increasing (row " + std::to_string(i) + ")");
        }
    }
    sensors_[port].trace = std::move(trace);
}

BrickSnapshot VirtualBrick::snapshot() const {
    BrickSnapshot s;
    s.clock_ms = clock_ms_;
    for (std::size_t i = 0; i < motors_.size(); ++i) {
        const auto& m = motors_[i];
        s.motors[i] = MotorSnapshot{m.state, m.velocity, m.tacho_mdeg / 1000.0, m.block_mdeg / 1000.0,
                                    m.rotation_mdeg / 1000.0};
    }
    for (std::size_t i = 0; i < sensors_.size(); ++i) {
        s.sensors[i] = SensorSnapshot{sensors_[i].sensor_type, sensors_[i].sensor_mode, sensors_[i].trace.size()};
    }
    for (std::size_t i = 0; i < mailboxes_.size(); ++i) {
        s.mailboxes[i].assign(mailboxes_[i].begin(), mailboxes_[i].end());
    }
    s.battery_mv = config_.battery_mv;
    s.sleep_limit_ms = config_.sleep_limit_ms;
    s.last_rx_ms = last_rx_ms_;
    s.asleep = asleep_;
    return s;
}

std::vector<BrickEvent> VirtualBrick::take_events() { return std::exchange(pending_, {}); }

void VirtualBrick::emit(std::vector<BrickEvent>& sink, std::string name, nlohmann::json details) {
    sink.push_back(BrickEvent{clock_ms_, std::move(name), std::move(details)});
}

std::vector<TracePoint> parse_trace_csv(std::string_view text) {
    std::vector<TracePoint> out;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;

        long long values[3] = {};
        std::size_t field = 0;
        bool numeric = true;
        std::istringstream row(line);
        std::string cell;
        while (std::getline(row, cell, ',')) {
            auto first = cell.find_first_not_of(" \t");
            auto last = cell.find_last_not_of(" \t");
            std::string_view v = first == std::string::npos ? std::string_view{}
                                                            : std::string_view(cell).substr(first, last - first + 1);
            long long parsed = 0;
            auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), parsed);
            if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) {
                numeric = false;
                break;
            }
            if (field < 3) values[field] = parsed;
            ++field;
        }
        if (!numeric && out.empty() && line_no == 1) continue;  // header
        if (!numeric || field != 3) {
            throw EmulatorError(EmulatorErrc::BadTraceFile,
                                "line " + std::to_string(line_no) + ": expected time_ms,raw,scaled");
        }
        if (values[0] < 0 || values[0] > UINT32_MAX || values[1] < 0 || values[1] > UINT16_MAX ||
            values[2] < INT16_MIN || values[2] > INT16_MAX) {
            throw EmulatorError(EmulatorErrc::BadTraceFile, "line " + std::to_string(line_no) + ": value out of range");
        }
        out.push_back(TracePoint{static_cast<std::uint32_t>(values[0]), static_cast<std::uint16_t>(values[1]),
                                 static_cast<std::int16_t>(values[2])});
    }
    return out;
}

std::vector<TracePoint> load_trace_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw EmulatorError(EmulatorErrc::BadTraceFile, path + ": cannot open");
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_trace_csv(buffer.str());
}

}  // namespace brickpad::emulator
