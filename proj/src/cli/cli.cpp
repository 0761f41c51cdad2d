#include "brickpad/cli/cli.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <condition_variable>
#include <fstream>
#include <iostream>
#include <mutex>

#include "CLI11.hpp"
#include "brickpad/emulator/host.hpp"
#include "brickpad/emulator/server.hpp"
#include "brickpad/motorctl/motor.hpp"
#include "brickpad/protocol/hex.hpp"
#include "brickpad/schema/schema.hpp"
#include "brickpad/service/service.hpp"
#include "brickpad/transport/errors.hpp"

namespace brickpad::cli {

using nlohmann::json;
using namespace std::chrono_literals;

std::optional<std::string> default_config_path(const std::function<const char*(const char*)>& getenv) {
    if (const char* xdg = getenv("XDG_CONFIG_HOME"); xdg && *xdg) return std::string(xdg) + "/brickpad/config.json";
    if (const char* home = getenv("HOME"); home && *home) return std::string(home) + "/.config/brickpad/config.json";
    return std::nullopt;
}

CliConfig resolve_config(const std::optional<std::string>& config_path, bool config_path_explicit,
                         const std::optional<std::string>& link_flag,
                         const std::function<const char*(const char*)>& getenv) {
    CliConfig config;
    auto set_endpoint = [&](const std::string& text, const std::string& source) {
        try {
            config.endpoint = transport::parse_endpoint(text);
            config.session.endpoint = *config.endpoint;
        } catch (const transport::LinkError& e) {
            throw std::invalid_argument(source + ": " + e.what());
        }
    };

    if (config_path) {
        std::ifstream in(*config_path);
        if (!in && config_path_explicit) throw std::invalid_argument("cannot read config file " + *config_path);
        if (in) {
            json file = json::parse(in, nullptr, false);
            if (file.is_discarded() || !file.is_object()) {
                throw std::invalid_argument(*config_path + ": not a JSON object");
            }
            try {
                if (file.contains("endpoint")) set_endpoint(file["endpoint"].get<std::string>(), *config_path);
                json session_keys = file;
                session_keys.erase("endpoint");
                session::apply_config_json(config.session, session_keys);
                if (file.contains("http")) config.http = file["http"].get<std::string>();
                if (file.contains("power")) config.power = file["power"].get<int>();
                if (file.contains("brake")) config.brake = file["brake"].get<bool>();
            } catch (const json::exception& e) {
                throw std::invalid_argument(*config_path + ": " + e.what());
            }
        }
    }

    if (const char* link = getenv("BRICKPAD_LINK"); link && *link) set_endpoint(link, "BRICKPAD_LINK");
    auto env_without_link = [&](const char* key) -> const char* {
        return std::string_view(key) == "BRICKPAD_LINK" ? nullptr : getenv(key);
    };
    session::apply_environment(config.session, env_without_link);
    if (const char* http = getenv("BRICKPAD_HTTP"); http && *http) config.http = http;

    if (link_flag) set_endpoint(*link_flag, "--link");
    if (config.power < 1 || config.power > 100) throw std::invalid_argument("power must be 1..100");
    return config;
}

namespace {

void wait_for_interrupt(const std::stop_token& token) {
    std::mutex m;
    std::condition_variable_any cv;
    std::unique_lock lock(m);
    cv.wait(lock, token, [] { return false; });
}

/// Owns whatever a command needs to reach the brick.
class Runtime {
public:
    Runtime(CliEnv& env, CliConfig config) : env_(env), config_(std::move(config)) {}

    ~Runtime() {
        session_.reset();
        if (emulator_) emulator_->stop_realtime();
    }

    CliEnv& env() { return env_; }
    const CliConfig& config() const { return config_; }
    std::ostream& out() { return *env_.out; }
    std::ostream& err() { return *env_.err; }
    Clock& clock() { return env_.clock ? *env_.clock : steady_; }

    session::Session& session() {
        if (!session_) {
            session_ = std::make_unique<session::Session>(config_.session, opener(), clock());
        }
        return *session_;
    }

    /// Prints the reason and returns false when the brick is unreachable.
    bool connect() {
        if (!config_.endpoint) {
            err() << "error: no link endpoint; use --link, BRICKPAD_LINK or the config file\n";
            return false;
        }
        try {
            session().connect();
            return true;
        } catch (const session::SessionError& e) {
            err() << "error: cannot connect to " << config_.endpoint->to_string() << ": " << e.what() << "\n";
            return false;
        }
    }

private:
    session::LinkOpener opener() {
        if (env_.opener) return env_.opener;
        return [this](const transport::LinkEndpoint& endpoint, Millis timeout) {
            transport::OpenOptions options;
            options.loopback = [this] {
                if (!emulator_) {
                    emulator_ = std::make_unique<emulator::EmulatorHost>();
                    emulator_->start_realtime();
                }
                return emulator_->connect();
            };
            return transport::open_link(endpoint, timeout, options);
        };
    }

    CliEnv& env_;
    CliConfig config_;
    SteadyClock steady_;
    std::unique_ptr<emulator::EmulatorHost> emulator_;
    std::unique_ptr<session::Session> session_;
};

json telemetry_json(const session::SessionState& state, const session::Telemetry& t) {
    json motors = json::array();
    for (std::uint8_t p = 0; p < protocol::kMotorCount; ++p) {
        const auto& m = t.motors[p];
        motors.push_back({{"port", std::string(1, motorctl::port_letter(p))},
                          {"label", std::string(motorctl::default_label(p))},
                          {"power", m.state.power},
                          {"run_state", std::string(protocol::to_string(m.state.run_state))},
                          {"tacho", m.counters.tacho_count},
                          {"block_tacho", m.counters.block_tacho},
                          {"rotation", m.counters.rotation_count}});
    }
    return {{"phase", std::string(session::to_string(state.phase))},
            {"endpoint", state.endpoint.to_string()},
            {"battery_mv", t.battery_mv},
            {"keepalive_ms", state.keepalive_interval.count()},
            {"sleep_limit_ms", state.sleep_limit_ms},
            {"motors", motors}};
}

int cmd_status(Runtime& rt, bool as_json) {
    auto unreachable = [&] {
        const auto endpoint = rt.config().endpoint ? rt.config().endpoint->to_string() : std::string();
        const auto error = rt.config().endpoint ? rt.session().state().last_error.value_or("") : "no endpoint";
        if (as_json) {
            rt.out() << json{{"phase", "Disconnected"}, {"endpoint", endpoint}, {"error", error}}.dump() << "\n";
        } else {
            rt.out() << "phase: Disconnected\nendpoint: " << endpoint << "\n";
        }
        return kConnectionFailure;
    };
    if (!rt.connect()) return unreachable();

    session::Telemetry t;
    try {
        t = rt.session().poll_telemetry();
    } catch (const session::SessionError& e) {
        rt.err() << "error: " << e.what() << "\n";
        rt.session().disconnect();
        return kConnectionFailure;
    }
    const auto state = rt.session().state();
    if (as_json) {
        rt.out() << telemetry_json(state, t).dump() << "\n";
    } else {
        rt.out() << "phase: " << session::to_string(state.phase) << "\n"
                 << "endpoint: " << state.endpoint.to_string() << "\n"
                 << "battery: " << t.battery_mv << " mV\n"
                 << "keep-alive: " << state.keepalive_interval.count() << " ms (sleep limit "
                 << state.sleep_limit_ms << " ms)\n";
        for (std::uint8_t p = 0; p < protocol::kMotorCount; ++p) {
            const auto& m = t.motors[p];
            rt.out() << "motor " << motorctl::port_letter(p) << " (" << motorctl::default_label(p)
                     << "): tacho " << m.counters.tacho_count << ", block " << m.counters.block_tacho
                     << ", rotation " << m.counters.rotation_count << ", power " << m.state.power << ", "
                     << protocol::to_string(m.state.run_state) << "\n";
        }
    }
    rt.session().disconnect();
    return kOk;
}

struct MotorArgs {
    std::string port;
    std::string action;
    std::optional<int> power;
    std::uint32_t degrees = 0;
    bool hold = false;
    std::optional<bool> brake;
};

int cmd_motor(Runtime& rt, const MotorArgs& args) {
    const auto port = *motorctl::port_from_letter(args.port[0]);
    const bool turn = args.action == "turn";
    const int power = args.power.value_or(rt.config().power);
    if (turn ? (power < -100 || power > 100) : (power < 1 || power > 100)) {
        rt.err() << "error: --power must be " << (turn ? "-100..100" : "1..100") << "\n";
        return kUsage;
    }
    if (!turn && args.degrees) {
        rt.err() << "error: --degrees only applies to turn\n";
        return kUsage;
    }
    if (turn && args.degrees && power == 0) {
        rt.err() << "error: a bounded turn needs non-zero --power\n";
        return kUsage;
    }
    if (!rt.connect()) return kConnectionFailure;

    auto& session = rt.session();
    motorctl::MotorHandle motor(port, turn ? motorctl::kDefaultPower : power, args.brake.value_or(rt.config().brake));
    motor.bind(session);
    int code = kOk;
    try {
        if (args.action == "cw") {
            motor.turn_cw();
        } else if (args.action == "ccw") {
            motor.turn_ccw();
        } else if (args.action == "stop") {
            // a fresh handle has no latch to consult, so a one-shot stop always sends
            session.send(motor.brake_on_stop() ? protocol::brake_image(port) : protocol::coast_image(port));
        } else if (args.action == "relax") {
            motor.relax();
        } else if (args.degrees && !args.hold) {
            // wait for the turn to finish, otherwise the closing coast would cut it short
            schema::Schema one{"turn", {schema::Step{schema::MotorOn{port, power, args.degrees}}}};
            schema::RunOptions options;
            options.stop = rt.env().interrupt;
            auto report = schema::run_schema(one, session, rt.clock(), options);
            if (report.aborted) {
                rt.err() << "error: " << report.reason << "\n";
                code = kConnectionFailure;
            }
        } else {
            motor.turn(power, args.degrees);
        }
    } catch (const session::SessionError& e) {
        rt.err() << "error: " << e.what() << "\n";
        session.disconnect();
        return kConnectionFailure;
    }
    if (code == kOk) {
        rt.out() << "motor " << motorctl::port_letter(port) << " (" << motor.label() << "): " << args.action;
        if (args.action == "cw" || args.action == "ccw" || turn) rt.out() << " power " << power;
        if (turn && args.degrees) rt.out() << " degrees " << args.degrees;
        rt.out() << "\n";
    }
    if (args.hold) {
        rt.out() << "holding the link; interrupt to release\n";
        rt.out().flush();
        wait_for_interrupt(rt.env().interrupt);
    }
    session.disconnect();
    return code;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int cmd_repl(Runtime& rt) {
    if (!rt.connect()) return kConnectionFailure;
    auto& session = rt.session();
    auto& in = *rt.env().in;
    std::string raw;
    for (;;) {
        if (rt.env().interactive) rt.out() << "> " << std::flush;
        if (!std::getline(in, raw)) break;
        const auto line = trim(raw);
        if (line.empty()) continue;
        std::string lower = line;
        std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
        if (lower == "quit" || lower == "exit") break;
        try {
            const auto bytes = protocol::parse_hex(line);
            if (bytes.size() > protocol::kMaxTelegramSize) {
                rt.out() << "error: telegram exceeds 64 bytes\n";
                continue;
            }
            const auto telegram = protocol::decode_telegram(bytes);
            if (telegram.wants_reply()) {
                auto reply = session.request(telegram);
                rt.out() << protocol::format_hex(protocol::encode_reply(telegram.opcode, reply.status, reply.payload))
                         << "\n";
            } else {
                session.send(telegram);
                rt.out() << "(no reply requested)\n";
            }
        } catch (const protocol::CodecError& e) {
            if (e.code() == protocol::CodecErrc::BadHexToken) {
                rt.out() << "error: bad hex token\n";
            } else {
                rt.out() << "error: " << e.what() << "\n";
            }
        } catch (const std::exception& e) {
            rt.out() << "error: " << e.what() << "\n";
        }
    }
    session.disconnect();
    return kOk;
}

int cmd_schema_check(Runtime& rt, const std::string& path) {
    try {
        auto s = schema::load_schema(path);
        rt.out() << path << ": ok, " << s.steps.size() << " steps (" << schema::expand(s).size()
                 << " after expanding repeats)\n";
        return kOk;
    } catch (const schema::ParseError& e) {
        rt.err() << path << ":" << e.line() << ": " << e.reason() << "\n";
        return kUsage;
    }
}

json report_json(const schema::RunReport& r) {
    json outcomes = json::array();
    for (const auto& o : r.outcomes) {
        outcomes.push_back({{"index", o.index},
                            {"step", o.step},
                            {"ok", o.ok},
                            {"status", o.status ? json(std::string(protocol::to_string(*o.status))) : json(nullptr)},
                            {"reply_hex", o.reply_hex ? json(*o.reply_hex) : json(nullptr)},
                            {"error", o.error}});
    }
    return {{"name", r.name},
            {"succeeded", r.succeeded()},
            {"steps_executed", r.steps_executed},
            {"total_steps", r.total_steps},
            {"started_ms", r.started.count()},
            {"finished_ms", r.finished.count()},
            {"aborted", r.aborted},
            {"reason", r.reason},
            {"outcomes", outcomes}};
}

int cmd_schema_run(Runtime& rt, const std::string& path, bool as_json) {
    schema::Schema parsed;
    try {
        parsed = schema::load_schema(path);
    } catch (const schema::ParseError& e) {
        rt.err() << path << ":" << e.line() << ": " << e.reason() << "\n";
        return kUsage;
    }
    if (!rt.connect()) return kConnectionFailure;
    schema::RunOptions options;
    options.stop = rt.env().interrupt;
    if (!as_json) {
        options.progress = [&](const schema::Progress& p) {
            if (p.kind != schema::Progress::Kind::StepFinished) return;
            rt.out() << "[" << p.index + 1 << "/" << p.total << "] " << p.step;
            if (!p.ok) {
                rt.out() << "  failed: " << p.detail;
            } else if (!p.detail.empty()) {
                rt.out() << "  -> " << p.detail;
            }
            rt.out() << "\n";
        };
    }
    auto report = schema::run_schema(parsed, rt.session(), rt.clock(), options);
    if (as_json) {
        rt.out() << report_json(report).dump() << "\n";
    } else if (report.succeeded()) {
        rt.out() << "done: " << report.steps_executed << " steps in " << (report.finished - report.started).count()
                 << " ms\n";
    } else {
        rt.out() << "aborted after " << report.steps_executed << " of " << report.total_steps
                 << " steps: " << report.reason << "\n";
    }
    rt.session().disconnect();
    return report.succeeded() ? kOk : kSchemaFailed;
}

struct ServeArgs {
    std::optional<std::string> http;
    bool cors = false;
    std::string static_dir;
};

int cmd_serve(Runtime& rt, const ServeArgs& args) {
    std::pair<std::string, int> bind;
    try {
        bind = service::parse_bind_address(args.http.value_or(rt.config().http));
    } catch (const std::invalid_argument& e) {
        rt.err() << "error: " << e.what() << "\n";
        return kUsage;
    }
    auto& session = rt.session();
    if (rt.config().endpoint) {
        // auto-connect; a failure leaves the pad able to connect later
        if (!rt.connect()) spdlog::warn("starting disconnected");
    }
    service::ServiceOptions options;
    options.cors = args.cors;
    options.static_dir = args.static_dir;
    options.default_power = rt.config().power;
    options.brake_on_stop = rt.config().brake;
    std::unique_ptr<service::Service> svc;
    int port = 0;
    try {
        svc = std::make_unique<service::Service>(session, options);
        port = svc->start(bind.first, bind.second);
    } catch (const std::exception& e) {
        rt.err() << "error: " << e.what() << "\n";
        session.disconnect();
        return kConnectionFailure;
    }
    rt.out() << "serving http://" << bind.first << ":" << port << "\n" << std::flush;
    if (rt.env().on_listening) rt.env().on_listening("http", port);
    wait_for_interrupt(rt.env().interrupt);
    svc->stop();
    session.disconnect();
    return kOk;
}

struct EmuArgs {
    int port = 0;
    std::string host = "127.0.0.1";
    std::vector<std::string> traces;
    std::optional<std::uint32_t> sleep_limit;
    std::optional<std::uint16_t> battery;
    bool events = false;
};

int cmd_emu(Runtime& rt, const EmuArgs& args) {
    emulator::BrickConfig config;
    if (args.sleep_limit) config.sleep_limit_ms = *args.sleep_limit;
    if (args.battery) config.battery_mv = *args.battery;
    emulator::EmulatorHost host(config);
    for (const auto& spec : args.traces) {
        const auto eq = spec.find('=');
        if (eq != 1 || spec[0] < '1' || spec[0] > '4') {
            rt.err() << "error: --sensor-trace expects <1-4>=<file.csv>, got '" << spec << "'\n";
            return kUsage;
        }
        try {
            host.load_sensor_trace(static_cast<std::uint8_t>(spec[0] - '1'),
                                   emulator::load_trace_csv(spec.substr(2)));
        } catch (const emulator::EmulatorError& e) {
            rt.err() << "error: " << e.what() << "\n";
            return kUsage;
        }
    }
    std::mutex out_mutex;
    if (args.events) {
        host.set_event_sink([&](const emulator::BrickEvent& e) {
            std::lock_guard lock(out_mutex);
            rt.out() << e.to_json().dump() << "\n" << std::flush;
        });
    }
    std::unique_ptr<emulator::EmulatorServer> server;
    try {
        server = std::make_unique<emulator::EmulatorServer>(host, args.host, static_cast<std::uint16_t>(args.port));
    } catch (const transport::LinkError& e) {
        rt.err() << "error: " << e.what() << "\n";
        return kConnectionFailure;
    }
    host.start_realtime();
    {
        std::lock_guard lock(out_mutex);
        rt.out() << "emulating on tcp:" << args.host << ":" << server->port() << "\n" << std::flush;
    }
    if (rt.env().on_listening) rt.env().on_listening("emu", server->port());
    wait_for_interrupt(rt.env().interrupt);
    server->stop();
    host.stop_realtime();
    host.set_event_sink(nullptr);
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, CliEnv& env) {
    auto& out = *env.out;
    auto& err = *env.err;

    CLI::App app{"Drive a three-motor brick over a framed telegram link.", "brickpad"};
    app.require_subcommand(1);
    std::optional<std::string> link;
    std::optional<std::string> config_path;
    bool verbose = false;
    app.add_option("--link", link, "serial:<device>, tcp:<host>:<port> or emu:");
    app.add_option("--config", config_path, "config file (default ~/.config/brickpad/config.json)");
    app.add_flag("-v,--verbose", verbose, "debug logging");

    MotorArgs motor;
    auto* motor_cmd = app.add_subcommand("motor", "one-shot motor command");
    motor_cmd->add_option("port", motor.port, "A (Rotate), B (Lift) or C (Claw)")
        ->required()
        ->check(CLI::IsMember({"A", "B", "C"}, CLI::ignore_case));
    motor_cmd->add_option("action", motor.action, "cw | ccw | stop | relax | turn")
        ->required()
        ->check(CLI::IsMember({"cw", "ccw", "stop", "relax", "turn"}));
    motor_cmd->add_option("--power", motor.power, "1..100 (turn: -100..100)");
    motor_cmd->add_option("--degrees", motor.degrees, "turn only; 0 runs until stopped");
    motor_cmd->add_flag("--hold", motor.hold, "keep the link up until interrupted");
    motor_cmd->add_flag("--brake,!--coast", motor.brake, "how stop halts the motor");

    auto* repl_cmd = app.add_subcommand("repl", "raw hex console");

    bool status_json = false;
    auto* status_cmd = app.add_subcommand("status", "link and brick status");
    status_cmd->add_flag("--json", status_json);

    std::string schema_file;
    bool schema_json = false;
    auto* schema_cmd = app.add_subcommand("schema", "check or run a stored routine");
    schema_cmd->require_subcommand(1);
    auto* check_cmd = schema_cmd->add_subcommand("check", "parse only");
    check_cmd->add_option("file", schema_file)->required();
    auto* run_cmd = schema_cmd->add_subcommand("run", "execute against the brick");
    run_cmd->add_option("file", schema_file)->required();
    run_cmd->add_flag("--json", schema_json);

    ServeArgs serve;
    auto* serve_cmd = app.add_subcommand("serve", "HTTP control-pad service");
    serve_cmd->add_option("--http", serve.http, "bind address, e.g. 127.0.0.1:8080");
    serve_cmd->add_flag("--cors", serve.cors, "allow cross-origin pad development");
    serve_cmd->add_option("--static", serve.static_dir, "serve the pad from this directory");

    EmuArgs emu;
    auto* emu_cmd = app.add_subcommand("emu", "virtual brick on TCP");
    emu_cmd->add_option("--listen", emu.port, "TCP port (0 picks one)")->required()->check(CLI::Range(0, 65535));
    emu_cmd->add_option("--host", emu.host, "bind address");
    emu_cmd->add_option("--sensor-trace", emu.traces, "<port 1-4>=<file.csv>");
    emu_cmd->add_option("--sleep-limit", emu.sleep_limit, "ms of silence before sleeping; 0 never");
    emu_cmd->add_option("--battery", emu.battery, "battery level in mV");
    emu_cmd->add_flag("--events", emu.events, "print brick events as JSON lines");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);

    if (*check_cmd) {
        Runtime rt(env, CliConfig{});
        return cmd_schema_check(rt, schema_file);
    }
    if (*emu_cmd) {
        Runtime rt(env, CliConfig{});
        return cmd_emu(rt, emu);
    }

    CliConfig config;
    try {
        const bool explicit_path = config_path.has_value();
        auto path = explicit_path ? config_path : default_config_path(env.getenv);
        config = resolve_config(path, explicit_path, link, env.getenv);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }
    if (!config.endpoint && !*serve_cmd) {
        err << "error: no link endpoint; use --link, BRICKPAD_LINK or the config file\n";
        return kUsage;
    }
    Runtime rt(env, std::move(config));

    if (*motor_cmd) return cmd_motor(rt, motor);
    if (*repl_cmd) return cmd_repl(rt);
    if (*status_cmd) return cmd_status(rt, status_json);
    if (*run_cmd) return cmd_schema_run(rt, schema_file, schema_json);
    if (*serve_cmd) return cmd_serve(rt, serve);
    return kUsage;
}

}  // namespace brickpad::cli
