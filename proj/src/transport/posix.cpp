#include "brickpad/transport/posix.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <termios.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "brickpad/transport/errors.hpp"

namespace brickpad::transport {

namespace {

std::string errno_text(int err) { return std::strerror(err); }

int poll_ms(std::chrono::milliseconds timeout) {
    return static_cast<int>(std::min<std::chrono::milliseconds::rep>(timeout.count(), 1 << 30));
}

speed_t baud_constant(unsigned baud) {
    switch (baud) {
        case 9600:
            return B9600;
        case 19200:
            return B19200;
        case 38400:
            return B38400;
        case 57600:
            return B57600;
        case 115200:
            return B115200;
        case 230400:
            return B230400;
        case 460800:
            return B460800;
        case 921600:
            return B921600;
        default:
            throw LinkError(LinkErrc::IoError, "unsupported baud rate " + std::to_string(baud));
    }
}

}  // namespace

FdChannel::FdChannel(int fd, bool is_socket) : fd_(fd), is_socket_(is_socket) {}

FdChannel::~FdChannel() {
    close();
    ::close(fd_);
}

void FdChannel::write_all(std::span<const std::uint8_t> bytes) {
    std::size_t done = 0;
    while (done < bytes.size()) {
        if (!open_) {
            throw LinkError(LinkErrc::LinkClosed, "channel closed");
        }
        ssize_t n = is_socket_ ? ::send(fd_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL)
                               : ::write(fd_, bytes.data() + done, bytes.size() - done);
        if (n < 0) {
            if (errno == EINTR) continue;
            if (errno == EAGAIN || errno == EWOULDBLOCK) {
                pollfd p{fd_, POLLOUT, 0};
                ::poll(&p, 1, 100);
                continue;
            }
            int err = errno;
            open_ = false;
            throw LinkError(err == EPIPE || err == ECONNRESET ? LinkErrc::LinkClosed : LinkErrc::IoError,
                            errno_text(err));
        }
        done += static_cast<std::size_t>(n);
    }
}

std::optional<std::size_t> FdChannel::read_some(std::span<std::uint8_t> buffer,
                                                std::chrono::milliseconds timeout) {
    if (!open_) {
        return 0;
    }
    pollfd p{fd_, POLLIN, 0};
    int rc;
    do {
        rc = ::poll(&p, 1, poll_ms(timeout));
    } while (rc < 0 && errno == EINTR);
    if (rc == 0) {
        return std::nullopt;
    }
    if (!open_) {
        return 0;
    }
    ssize_t n;
    do {
        n = ::read(fd_, buffer.data(), buffer.size());
    } while (n < 0 && errno == EINTR);
    if (n < 0) {
        if (errno == EAGAIN || errno == EWOULDBLOCK) return std::nullopt;
        // a hung-up pty or reset socket reads as end of stream
        open_ = false;
        return 0;
    }
    if (n == 0) {
        open_ = false;
    }
    return static_cast<std::size_t>(n);
}

void FdChannel::close() noexcept {
    if (open_.exchange(false) && is_socket_) {
        ::shutdown(fd_, SHUT_RDWR);
    }
}

bool FdChannel::is_open() const noexcept { return open_; }

std::unique_ptr<FdChannel> connect_tcp(const std::string& host, std::uint16_t port,
                                       std::chrono::milliseconds timeout) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* result = nullptr;
    auto service = std::to_string(port);
    if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &result); rc != 0) {
        throw LinkError(LinkErrc::NoSuchDevice, host + ": " + ::gai_strerror(rc));
    }
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(result, ::freeaddrinfo);

    LinkErrc last = LinkErrc::Refused;
    std::string last_text = "no address";
    for (auto* ai = result; ai != nullptr; ai = ai->ai_next) {
        int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK, ai->ai_protocol);
        if (fd < 0) continue;
        int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
        if (rc < 0 && errno == EINPROGRESS) {
            pollfd p{fd, POLLOUT, 0};
            int prc;
            do {
                prc = ::poll(&p, 1, poll_ms(timeout));
            } while (prc < 0 && errno == EINTR);
            if (prc == 0) {
                ::close(fd);
                last = LinkErrc::ConnectTimeout;
                last_text = "no answer within " + std::to_string(timeout.count()) + " ms";
                continue;
            }
            int err = 0;
            socklen_t len = sizeof err;
            ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
            rc = err == 0 ? 0 : -1;
            errno = err;
        }
        if (rc != 0) {
            int err = errno;
            ::close(fd);
            last = err == ECONNREFUSED ? LinkErrc::Refused : LinkErrc::IoError;
            last_text = errno_text(err);
            continue;
        }
        int flags = ::fcntl(fd, F_GETFL);
        ::fcntl(fd, F_SETFL, flags & ~O_NONBLOCK);
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        return std::make_unique<FdChannel>(fd, true);
    }
    throw LinkError(last, host + ":" + service + ": " + last_text);
}

std::unique_ptr<FdChannel> open_serial(const std::string& device, const SerialOptions& options) {
    int fd = ::open(device.c_str(), O_RDWR | O_NOCTTY | O_CLOEXEC);
    if (fd < 0) {
        int err = errno;
        throw LinkError(err == ENOENT || err == ENXIO || err == ENODEV ? LinkErrc::NoSuchDevice : LinkErrc::IoError,
                        device + ": " + errno_text(err));
    }
    termios tio{};
    if (::tcgetattr(fd, &tio) == 0) {
        // 8N1, raw
        ::cfmakeraw(&tio);
        tio.c_cflag |= CLOCAL | CREAD;
        tio.c_cflag &= ~(PARENB | CSTOPB | CSIZE);
        tio.c_cflag |= CS8;
        if (options.hardware_flow_control) {
            tio.c_cflag |= CRTSCTS;
        } else {
            tio.c_cflag &= ~CRTSCTS;
        }
        tio.c_iflag &= ~(IXON | IXOFF | IXANY);
        try {
            auto speed = baud_constant(options.baud);
            ::cfsetispeed(&tio, speed);
            ::cfsetospeed(&tio, speed);
        } catch (...) {
            ::close(fd);
            throw;
        }
        if (::tcsetattr(fd, TCSANOW, &tio) != 0) {
            int err = errno;
            ::close(fd);
            throw LinkError(LinkErrc::IoError, device + ": " + errno_text(err));
        }
    }
    return std::make_unique<FdChannel>(fd, false);
}

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* result = nullptr;
    auto service = std::to_string(port);
    if (int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &result); rc != 0) {
        throw LinkError(LinkErrc::BindFailed, host + ": " + ::gai_strerror(rc));
    }
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(result, ::freeaddrinfo);

    std::string last_text = "no address";
    for (auto* ai = result; ai != nullptr; ai = ai->ai_next) {
        int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
        if (fd < 0) continue;
        int one = 1;
        ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        if (::bind(fd, ai->ai_addr, ai->ai_addrlen) != 0 || ::listen(fd, 8) != 0) {
            last_text = errno_text(errno);
            ::close(fd);
            continue;
        }
        sockaddr_storage addr{};
        socklen_t len = sizeof addr;
        ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
        if (addr.ss_family == AF_INET) {
            port_ = ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
        } else {
            port_ = ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port);
        }
        fd_ = fd;
        return;
    }
    throw LinkError(LinkErrc::BindFailed, host + ":" + service + ": " + last_text);
}

TcpListener::~TcpListener() {
    close();
    if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<FdChannel> TcpListener::accept(std::chrono::milliseconds timeout) {
    if (!open_) return nullptr;
    pollfd p{fd_, POLLIN, 0};
    int rc = ::poll(&p, 1, poll_ms(timeout));
    if (rc <= 0 || !open_) return nullptr;
    int fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) return nullptr;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return std::make_unique<FdChannel>(fd, true);
}

void TcpListener::close() noexcept {
    if (open_.exchange(false) && fd_ >= 0) {
        ::shutdown(fd_, SHUT_RDWR);
    }
}

}  // namespace brickpad::transport
