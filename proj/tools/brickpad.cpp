#include <csignal>
#include <cstdlib>
#include <iostream>
#include <stop_token>
#include <thread>
#include <unistd.h>

#include "brickpad/cli/cli.hpp"

int main(int argc, char** argv) {
    // Handle SIGINT/SIGTERM on a dedicated thread so long-running commands
    // can shut down cleanly instead of dying mid-telegram.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    std::stop_source interrupt;
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        interrupt.request_stop();
    });
    waiter.detach();

    brickpad::cli::CliEnv env;
    env.in = &std::cin;
    env.out = &std::cout;
    env.err = &std::cerr;
    env.getenv = [](const char* key) { return std::getenv(key); };
    env.interrupt = interrupt.get_token();
    env.interactive = isatty(STDIN_FILENO);

    std::vector<std::string> args(argv + 1, argv + argc);
    const int code = brickpad::cli::run(args, env);
    std::cout.flush();
    std::_Exit(code);
}
