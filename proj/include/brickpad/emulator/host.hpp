#pragma once

#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "brickpad/clock.hpp"
#include "brickpad/emulator/brick.hpp"
#include "brickpad/transport/channel.hpp"

namespace brickpad::emulator {

/// Owns a VirtualBrick and serializes every access to it. Links reach the
/// brick through connect(); each returned channel speaks the framed wire
/// format and is closed by the host when the brick falls asleep.
class EmulatorHost {
public:
    using EventSink = std::function<void(const BrickEvent&)>;

    explicit EmulatorHost(BrickConfig config = {});
    ~EmulatorHost();
    EmulatorHost(const EmulatorHost&) = delete;
    EmulatorHost& operator=(const EmulatorHost&) = delete;

    std::unique_ptr<transport::ByteChannel> connect();

    /// Manual stepping for virtual-time tests.
    void advance(Millis dt);

    /// Wall-clock stepping on a background thread.
    void start_realtime(Millis cadence = Millis(10));
    void stop_realtime();

    BrickSnapshot snapshot() const;
    std::vector<BrickEvent> events() const;
    void clear_events();
    /// Called for every event, under the host lock; keep it short.
    void set_event_sink(EventSink sink);

    void load_sensor_trace(std::uint8_t port, std::vector<TracePoint> trace);
    void close_connections(const std::string& reason);
    std::size_t open_connections() const;

    /// Direct access for tests that need the raw brick API.
    std::optional<Bytes> handle_telegram(std::span<const std::uint8_t> telegram);

    struct Core;

private:
    std::shared_ptr<Core> core_;
    std::jthread realtime_;
};

}  // namespace brickpad::emulator
