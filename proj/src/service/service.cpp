#include "brickpad/service/service.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <charconv>
#include <thread>

#include "brickpad/motorctl/motor.hpp"
#include "brickpad/protocol/hex.hpp"
#include "brickpad/schema/schema.hpp"
#include "brickpad/transport/errors.hpp"
#include "httplib.h"

namespace brickpad::service {

using nlohmann::json;
using namespace std::chrono_literals;

namespace {

class HttpError : public std::runtime_error {
public:
    HttpError(int status, const std::string& message) : std::runtime_error(message), status_(status) {}
    int status() const noexcept { return status_; }

private:
    int status_;
};

void reply_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded()) throw HttpError(400, "request body is not valid JSON");
    if (!body.is_object()) throw HttpError(400, "request body must be a JSON object");
    return body;
}

int int_field(const json& body, const char* key, int lo, int hi) {
    const auto& v = body.at(key);
    if (!v.is_number_integer()) throw HttpError(422, std::string(key) + " must be an integer");
    const auto n = v.get<long long>();
    if (n < lo || n > hi) {
        throw HttpError(422, std::string(key) + " must be " + std::to_string(lo) + ".." + std::to_string(hi));
    }
    return static_cast<int>(n);
}

int session_status(session::SessionErrc code) {
    switch (code) {
        case session::SessionErrc::NotConnected:
        case session::SessionErrc::AlreadyConnected:
            return 409;
        case session::SessionErrc::BadEndpoint:
        case session::SessionErrc::NotARequest:
            return 422;
        default:
            return 502;
    }
}

json telemetry_json(const session::Telemetry& t) {
    json motors = json::array();
    for (std::uint8_t p = 0; p < protocol::kMotorCount; ++p) {
        const auto& m = t.motors[p];
        motors.push_back({{"port", std::string(1, motorctl::port_letter(p))},
                          {"power", m.state.power},
                          {"mode", static_cast<int>(m.state.mode)},
                          {"run_state", std::string(protocol::to_string(m.state.run_state))},
                          {"tacho", m.counters.tacho_count},
                          {"block_tacho", m.counters.block_tacho},
                          {"rotation", m.counters.rotation_count}});
    }
    return {{"battery_mv", t.battery_mv},
            {"sample_time_ms", t.sample_time.count()},
            {"sequence", t.sequence},
            {"motors", motors}};
}

}  // namespace

struct Service::Impl {
    Impl(session::Session& s, ServiceOptions o)
        : session(s),
          options(std::move(o)),
          hub(options.event_capacity),
          motors{motorctl::MotorHandle(0, options.default_power, options.brake_on_stop),
                 motorctl::MotorHandle(1, options.default_power, options.brake_on_stop),
                 motorctl::MotorHandle(2, options.default_power, options.brake_on_stop)} {
        for (std::uint8_t p = 0; p < protocol::kMotorCount; ++p) {
            motors[p].set_label(options.labels[p]);
            motors[p].bind(session);
        }
        alive = std::make_shared<Alive>();
        observer_id = session.add_observer([this, guard = alive](const session::SessionEvent& e) {
            std::lock_guard lock(guard->mutex);
            if (guard->alive) on_session_event(e);
        });
        install_routes();
    }

    struct Alive {
        std::mutex mutex;
        bool alive = true;
    };

    void on_session_event(const session::SessionEvent& e) {
        if (e.type == session::SessionEvent::Type::PhaseChanged) {
            // the brick may have been reset or replaced; latches restart cold
            if (e.phase == session::Phase::Disconnected) ++link_generation;
            hub.publish("link", {{"phase", std::string(session::to_string(e.phase))}, {"reason", e.reason}});
            return;
        }
        if (!e.telemetry) return;
        json payload = telemetry_json(*e.telemetry);
        {
            std::lock_guard lock(motors_mutex);
            sync_latches();
            for (std::uint8_t p = 0; p < protocol::kMotorCount; ++p) {
                motors[p].observe(*e.telemetry);
                payload["motors"][p]["is_running"] = motors[p].is_running();
                payload["motors"][p]["label"] = motors[p].label();
            }
        }
        {
            std::lock_guard lock(telemetry_mutex);
            telemetry = *e.telemetry;
        }
        hub.publish("telemetry", std::move(payload));
    }

    // motors_mutex held
    void sync_latches() {
        const auto gen = link_generation.load();
        if (gen == seen_generation) return;
        for (auto& m : motors) {
            m.unbind();
            m.bind(session);
        }
        seen_generation = gen;
    }

    json motor_json(std::uint8_t p, const std::optional<session::Telemetry>& t) const {
        const auto& m = motors[p];
        json j{{"port", std::string(1, motorctl::port_letter(p))},
               {"label", m.label()},
               {"power", m.power()},
               {"brake_on_stop", m.brake_on_stop()},
               {"is_running", m.is_running()},
               {"tacho", nullptr},
               {"block_tacho", nullptr},
               {"run_state", nullptr}};
        if (t) {
            j["tacho"] = t->motors[p].counters.tacho_count;
            j["block_tacho"] = t->motors[p].counters.block_tacho;
            j["run_state"] = std::string(protocol::to_string(t->motors[p].state.run_state));
        }
        return j;
    }

    json status() {
        const auto state = session.state();
        std::optional<session::Telemetry> t;
        {
            std::lock_guard lock(telemetry_mutex);
            t = telemetry;
        }
        json motors_json = json::array();
        {
            std::lock_guard lock(motors_mutex);
            sync_latches();
            for (std::uint8_t p = 0; p < protocol::kMotorCount; ++p) motors_json.push_back(motor_json(p, t));
        }
        return {{"phase", std::string(session::to_string(state.phase))},
                {"endpoint", state.endpoint.to_string()},
                {"battery_mv", t ? json(t->battery_mv) : json(nullptr)},
                {"sample_time_ms", t ? json(t->sample_time.count()) : json(nullptr)},
                {"keepalive_ms", state.keepalive_interval.count()},
                {"sleep_limit_ms", state.sleep_limit_ms},
                {"last_error", state.last_error ? json(*state.last_error) : json(nullptr)},
                {"motors", motors_json}};
    }

    std::uint8_t motor_port(const std::string& text) {
        if (text.size() != 1) throw HttpError(422, "unknown motor '" + text + "'");
        auto port = motorctl::port_from_letter(text[0]);
        if (!port) throw HttpError(422, "unknown motor '" + text + "'");
        return *port;
    }

    void require_connected() {
        if (session.phase() != session::Phase::Connected) throw HttpError(409, "not connected");
    }

    template <class Fn>
    httplib::Server::Handler guarded(Fn fn) {
        return [this, fn](const httplib::Request& req, httplib::Response& res) {
            try {
                fn(req, res);
            } catch (const HttpError& e) {
                reply_json(res, e.status(), {{"error", e.what()}});
            } catch (const session::SessionError& e) {
                reply_json(res, session_status(e.code()), {{"error", e.what()}});
            } catch (const motorctl::MotorError& e) {
                reply_json(res, e.code() == motorctl::MotorErrc::NotBound ? 409 : 422, {{"error", e.what()}});
            } catch (const protocol::CodecError& e) {
                reply_json(res, 400, {{"error", e.what()}});
            } catch (const transport::LinkError& e) {
                reply_json(res, e.code() == transport::LinkErrc::BadEndpoint ? 422 : 502, {{"error", e.what()}});
            } catch (const json::exception& e) {
                reply_json(res, 400, {{"error", e.what()}});
            } catch (const std::exception& e) {
                spdlog::error("{} {}: {}", req.method, req.path, e.what());
                reply_json(res, 500, {{"error", e.what()}});
            }
        };
    }

    void install_routes() {
        if (options.cors) {
            server.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
                res.set_header("Access-Control-Allow-Origin", "*");
                res.set_header("Access-Control-Allow-Headers", "Content-Type");
                res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
            });
            server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
        }
        const auto threads = options.worker_threads;
        server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };

        server.Get("/api/status", guarded([this](const auto&, auto& res) { reply_json(res, 200, status()); }));

        server.Post("/api/connect", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        auto body = parse_body(req);
                        if (session.phase() != session::Phase::Disconnected) throw HttpError(409, "already connected");
                        if (body.contains("endpoint")) {
                            if (!body["endpoint"].is_string()) throw HttpError(400, "endpoint must be a string");
                            session.connect(transport::parse_endpoint(body["endpoint"].get<std::string>()));
                        } else {
                            session.connect();
                        }
                        reply_json(res, 200, status());
                    }));

        server.Post("/api/disconnect", guarded([this](const auto&, auto& res) {
                        session.disconnect();
                        reply_json(res, 200, status());
                    }));

        server.Post(R"(/api/motor/([^/]+)/(cw|ccw|stop|relax|turn))",
                    guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const auto port = motor_port(req.matches[1]);
                        const std::string action = req.matches[2];
                        auto body = parse_body(req);
                        require_connected();
                        std::lock_guard lock(motors_mutex);
                        sync_latches();
                        auto& m = motors[port];
                        if (action == "cw" || action == "ccw") {
                            if (body.contains("power")) m.set_power(int_field(body, "power", 1, 100));
                            action == "cw" ? m.turn_cw() : m.turn_ccw();
                        } else if (action == "stop") {
                            m.stop();
                        } else if (action == "relax") {
                            m.relax();
                        } else {
                            if (!body.contains("power")) throw HttpError(422, "turn needs power");
                            const int power = int_field(body, "power", -100, 100);
                            int degrees = 0;
                            if (body.contains("degrees")) degrees = int_field(body, "degrees", 0, 0x7FFFFFFF);
                            m.turn(power, static_cast<std::uint32_t>(degrees));
                        }
                        std::optional<session::Telemetry> t;
                        {
                            std::lock_guard tl(telemetry_mutex);
                            t = telemetry;
                        }
                        reply_json(res, 200, motor_json(port, t));
                    }));

        server.Post("/api/raw", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        auto body = parse_body(req);
                        if (!body.contains("hex") || !body["hex"].is_string()) throw HttpError(400, "hex missing");
                        const auto bytes = protocol::parse_hex(body["hex"].get<std::string>());
                        if (bytes.size() > protocol::kMaxTelegramSize) throw HttpError(400, "telegram exceeds 64 bytes");
                        const auto telegram = protocol::decode_telegram(bytes);
                        require_connected();
                        if (!telegram.wants_reply()) {
                            session.send(telegram);
                            reply_json(res, 200, {{"reply_hex", nullptr}});
                            return;
                        }
                        auto reply = session.request(telegram);
                        reply_json(res, 200,
                                   {{"reply_hex", protocol::format_hex(protocol::encode_reply(
                                                      telegram.opcode, reply.status, reply.payload))}});
                    }));

        server.Post("/api/schema/run", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        auto body = parse_body(req);
                        if (!body.contains("text") || !body["text"].is_string()) throw HttpError(400, "text missing");
                        const auto text = body["text"].get<std::string>();
                        if (text.size() > schema::kMaxSourceBytes) throw HttpError(422, "schema larger than 64 KiB");
                        schema::Schema parsed;
                        try {
                            parsed = schema::parse_schema(text, body.value("name", std::string("schema")));
                        } catch (const schema::ParseError& e) {
                            reply_json(res, 422, {{"error", e.what()}, {"line", e.line()}});
                            return;
                        }
                        require_connected();
                        reply_json(res, 200, {{"run_id", start_run(std::move(parsed))}});
                    }));

        server.Post("/api/schema/stop", guarded([this](const auto&, auto& res) {
                        std::lock_guard lock(run_mutex);
                        const bool running = run_state == "running";
                        if (running) runner.request_stop();
                        reply_json(res, 200, {{"stopping", running}, {"run_id", run_id}});
                    }));

        server.Get("/api/schema/status", guarded([this](const auto&, auto& res) {
                       reply_json(res, 200, schema_status());
                   }));

        server.Get("/api/events", [this](const httplib::Request&, httplib::Response& res) {
            auto sub = hub.subscribe();
            res.set_header("Cache-Control", "no-cache");
            res.set_header("X-Accel-Buffering", "no");
            auto greeted = std::make_shared<bool>(false);
            auto idle = std::make_shared<int>(0);
            res.set_chunked_content_provider(
                "text/event-stream",
                [sub, greeted, idle](std::size_t, httplib::DataSink& sink) {
                    if (!*greeted) {
                        *greeted = true;
                        static const std::string hello = "retry: 1000\n\n";
                        return sink.write(hello.data(), hello.size());
                    }
                    if (auto e = sub->next(200ms)) {
                        *idle = 0;
                        const auto frame = "id: " + std::to_string(e->seq) + "\nevent: " + e->type +
                                           "\ndata: " + e->to_json().dump() + "\n\n";
                        return sink.write(frame.data(), frame.size());
                    }
                    if (sub->closed()) {
                        sink.done();
                        return true;
                    }
                    // comment lines let a dead peer surface as a write error
                    if (++*idle >= 10) {
                        *idle = 0;
                        static const std::string ping = ": ping\n\n";
                        return sink.write(ping.data(), ping.size());
                    }
                    return true;
                },
                [this, sub](bool) { hub.unsubscribe(sub); });
        });

        if (!options.static_dir.empty() && !server.set_mount_point("/", options.static_dir)) {
            throw std::runtime_error("static directory not found: " + options.static_dir);
        }
    }

    std::uint64_t start_run(schema::Schema parsed) {
        std::lock_guard lock(run_mutex);
        if (run_state == "running") throw HttpError(409, "a schema is already running");
        if (runner.joinable()) runner.join();
        const auto id = ++run_id;
        run_state = "running";
        run_report.reset();
        run_progress = 0;
        run_total = schema::expand(parsed).size();
        runner = std::jthread([this, id, parsed = std::move(parsed)](std::stop_token stop) {
            schema::RunOptions o;
            o.stop = stop;
            o.progress = [this, id](const schema::Progress& p) {
                static constexpr const char* kinds[] = {"started", "step_started", "step_finished", "finished"};
                if (p.kind == schema::Progress::Kind::StepFinished && p.ok) {
                    std::lock_guard lock(run_mutex);
                    run_progress = p.index + 1;
                }
                hub.publish("schema", {{"run_id", id},
                                       {"event", kinds[static_cast<int>(p.kind)]},
                                       {"index", p.index},
                                       {"total", p.total},
                                       {"step", p.step},
                                       {"ok", p.ok},
                                       {"detail", p.detail}});
            };
            auto report = schema::run_schema(parsed, session, session.clock(), o);
            std::lock_guard lock(run_mutex);
            run_state = report.aborted ? "aborted" : "finished";
            run_report = std::move(report);
        });
        return id;
    }

    json schema_status() {
        std::lock_guard lock(run_mutex);
        json j{{"run_id", run_id ? json(run_id) : json(nullptr)},
               {"state", run_state},
               {"steps_executed", run_progress},
               {"total_steps", run_total}};
        if (run_report) {
            json outcomes = json::array();
            for (const auto& o : run_report->outcomes) {
                outcomes.push_back({{"index", o.index},
                                    {"step", o.step},
                                    {"ok", o.ok},
                                    {"reply_hex", o.reply_hex ? json(*o.reply_hex) : json(nullptr)},
                                    {"error", o.error}});
            }
            j["steps_executed"] = run_report->steps_executed;
            j["report"] = {{"name", run_report->name},
                           {"aborted", run_report->aborted},
                           {"reason", run_report->reason},
                           {"started_ms", run_report->started.count()},
                           {"finished_ms", run_report->finished.count()},
                           {"outcomes", outcomes}};
        }
        return j;
    }

    void stop() {
        {
            std::lock_guard lock(alive->mutex);
            if (!alive->alive) return;
            alive->alive = false;
        }
        session.remove_observer(observer_id);
        {
            std::unique_lock lock(run_mutex);
            if (runner.joinable()) {
                runner.request_stop();
                lock.unlock();
                runner.join();
            }
        }
        hub.close_all();
        server.stop();
        if (listener.joinable()) listener.join();
    }

    session::Session& session;
    ServiceOptions options;
    EventHub hub;
    httplib::Server server;
    std::thread listener;
    int observer_id = -1;
    std::shared_ptr<Alive> alive;

    std::mutex motors_mutex;
    std::array<motorctl::MotorHandle, protocol::kMotorCount> motors;
    std::atomic<std::uint64_t> link_generation{0};
    std::uint64_t seen_generation = 0;

    std::mutex telemetry_mutex;
    std::optional<session::Telemetry> telemetry;

    std::mutex run_mutex;
    std::jthread runner;
    std::uint64_t run_id = 0;
    std::string run_state = "idle";
    std::size_t run_progress = 0;
    std::size_t run_total = 0;
    std::optional<schema::RunReport> run_report;
};

Service::Service(session::Session& session, ServiceOptions options)
    : impl_(std::make_unique<Impl>(session, std::move(options))) {}

Service::~Service() { stop(); }

int Service::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
        if (bound < 0) throw std::runtime_error("cannot bind " + host);
    } else if (!impl_->server.bind_to_port(host, port)) {
        throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    }
    impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void Service::stop() { impl_->stop(); }

EventHub& Service::events() noexcept { return impl_->hub; }

nlohmann::json Service::status() const { return impl_->status(); }

std::pair<std::string, int> parse_bind_address(const std::string& text) {
    std::string host = "127.0.0.1";
    std::string port_text = text;
    if (auto colon = text.rfind(':'); colon != std::string::npos) {
        if (colon > 0) host = text.substr(0, colon);
        port_text = text.substr(colon + 1);
    }
    int port = -1;
    auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
    if (ec != std::errc{} || ptr != port_text.data() + port_text.size() || port < 0 || port > 65535) {
        throw std::invalid_argument("bad bind address '" + text + "'");
    }
    return {host, port};
}

}  // namespace brickpad::service
