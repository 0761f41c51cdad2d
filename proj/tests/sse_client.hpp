#pragma once

// Minimal text/event-stream reader for tests: collects the JSON `data:`
// payload of every event on a background thread.

#include <atomic>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

namespace brickpad::testing {

class SseClient {
public:
    explicit SseClient(int port) : client_("127.0.0.1", port) {
        client_.set_read_timeout(std::chrono::seconds(30));
        reader_ = std::thread([this] {
            client_.Get("/api/events", [this](const char* data, std::size_t len) {
                feed(std::string_view(data, len));
                return !closing_.load();
            });
            finished_ = true;
        });
    }

    ~SseClient() { close(); }

    void close() {
        closing_ = true;
        client_.stop();
        if (reader_.joinable()) reader_.join();
    }

    std::vector<nlohmann::json> events() const {
        std::lock_guard lock(mutex_);
        return events_;
    }

    bool finished() const { return finished_.load(); }

private:
    void feed(std::string_view chunk) {
        buffer_.append(chunk);
        for (auto end = buffer_.find("\n\n"); end != std::string::npos; end = buffer_.find("\n\n")) {
            const auto block = buffer_.substr(0, end);
            buffer_.erase(0, end + 2);
            std::size_t pos = 0;
            while (pos < block.size()) {
                auto nl = block.find('\n', pos);
                if (nl == std::string::npos) nl = block.size();
                const auto line = block.substr(pos, nl - pos);
                pos = nl + 1;
                if (line.rfind("data: ", 0) == 0) {
                    std::lock_guard lock(mutex_);
                    events_.push_back(nlohmann::json::parse(line.substr(6)));
                }
            }
        }
    }

    httplib::Client client_;
    std::thread reader_;
    std::atomic<bool> closing_{false};
    std::atomic<bool> finished_{false};
    std::string buffer_;
    mutable std::mutex mutex_;
    std::vector<nlohmann::json> events_;
};

}  // namespace brickpad::testing
