#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <stop_token>
#include <string>
#include <vector>

#include "brickpad/clock.hpp"
#include "brickpad/session/session.hpp"
#include "json.hpp"

namespace brickpad::cli {

enum ExitCode : int {
    kOk = 0,
    kConnectionFailure = 1,
    kUsage = 2,
    kSchemaFailed = 3,
};

/// Everything the commands touch outside the process, so tests can stand in.
struct CliEnv {
    std::istream* in = nullptr;
    std::ostream* out = nullptr;
    std::ostream* err = nullptr;
    std::function<const char*(const char*)> getenv;
    /// Null uses open_link with an in-process emulator behind `emu:`.
    session::LinkOpener opener;
    /// Null uses a steady clock.
    Clock* clock = nullptr;
    /// Long-running commands (serve, emu, --hold) return once this is signalled;
    /// schema runs abort on it.
    std::stop_token interrupt;
    /// Called with ("http" | "emu", port) once a server is accepting.
    std::function<void(const std::string&, int)> on_listening;
    /// Print a prompt before each REPL line.
    bool interactive = false;
};

/// Effective settings after config file, environment and flags.
struct CliConfig {
    std::optional<transport::LinkEndpoint> endpoint;
    session::SessionConfig session;
    std::string http = "127.0.0.1:8080";
    int power = 75;
    bool brake = true;
};

/// ${XDG_CONFIG_HOME:-$HOME/.config}/brickpad/config.json
std::optional<std::string> default_config_path(const std::function<const char*(const char*)>& getenv);

/// Layers config file < environment < --link. Throws std::invalid_argument
/// with a user-facing message on bad values or an unreadable --config.
CliConfig resolve_config(const std::optional<std::string>& config_path, bool config_path_explicit,
                         const std::optional<std::string>& link_flag,
                         const std::function<const char*(const char*)>& getenv);

int run(const std::vector<std::string>& args, CliEnv& env);

}  // namespace brickpad::cli
