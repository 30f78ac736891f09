#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "splitnn/error.hpp"
#include "splitnn/runtime/frame.hpp"

namespace splitnn::runtime {

// Owns one connected stream socket. timeout_ms <= 0 blocks forever.
class Stream {
public:
    Stream() = default;
    explicit Stream(int fd) : fd_(fd) {}
    ~Stream() { close(); }

    Stream(Stream&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
    Stream& operator=(Stream&& o) noexcept {
        if (this != &o) {
            close();
            fd_ = std::exchange(o.fd_, -1);
        }
        return *this;
    }
    Stream(const Stream&) = delete;
    Stream& operator=(const Stream&) = delete;

    bool is_open() const noexcept { return fd_ >= 0; }
    int fd() const noexcept { return fd_; }

    void close() noexcept {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }
    void shutdown_write() noexcept {
        if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
    }

    void write_all(std::span<const std::uint8_t> data, int timeout_ms) {
        const auto deadline = deadline_from(timeout_ms);
        std::size_t done = 0;
        while (done < data.size()) {
            wait(POLLOUT, deadline, timeout_ms);
            ssize_t n = ::send(fd_, data.data() + done, data.size() - done, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR || errno == EAGAIN) continue;
                throw ConnectionError(std::string("send failed: ") + std::strerror(errno));
            }
            done += static_cast<std::size_t>(n);
        }
    }

    // Returns the number of bytes read; fewer than out.size() only on EOF.
    std::size_t read_some_exact(std::span<std::uint8_t> out, int timeout_ms) {
        const auto deadline = deadline_from(timeout_ms);
        std::size_t done = 0;
        while (done < out.size()) {
            wait(POLLIN, deadline, timeout_ms);
            ssize_t n = ::recv(fd_, out.data() + done, out.size() - done, 0);
            if (n == 0) return done;
            if (n < 0) {
                if (errno == EINTR || errno == EAGAIN) continue;
                throw ConnectionError(std::string("recv failed: ") + std::strerror(errno));
            }
            done += static_cast<std::size_t>(n);
        }
        return done;
    }

    // True when a recv would not block (data, EOF or error pending).
    bool wait_readable(int timeout_ms) {
        if (fd_ < 0) return true;
        pollfd p{fd_, POLLIN, 0};
        int r = ::poll(&p, 1, timeout_ms);
        return r != 0;
    }

    void read_exact(std::span<std::uint8_t> out, int timeout_ms) {
        if (read_some_exact(out, timeout_ms) != out.size()) throw ConnectionError("connection closed by peer");
    }

private:
    using Clock = std::chrono::steady_clock;

    static Clock::time_point deadline_from(int timeout_ms) {
        return timeout_ms > 0 ? Clock::now() + std::chrono::milliseconds(timeout_ms) : Clock::time_point::max();
    }

    void wait(short events, Clock::time_point deadline, int timeout_ms) {
        if (fd_ < 0) throw ConnectionError("stream is closed");
        for (;;) {
            int wait_ms = -1;
            if (timeout_ms > 0) {
                auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
                if (left <= 0) throw TimeoutError("timed out after " + std::to_string(timeout_ms) + " ms");
                wait_ms = static_cast<int>(left);
            }
            pollfd p{fd_, events, 0};
            int r = ::poll(&p, 1, wait_ms);
            if (r < 0) {
                if (errno == EINTR) continue;
                throw IoError(std::string("poll failed: ") + std::strerror(errno));
            }
            if (r == 0) throw TimeoutError("timed out after " + std::to_string(timeout_ms) + " ms");
            // POLLHUP with pending data still lets recv drain it
            if (p.revents & (events | POLLHUP | POLLERR)) return;
        }
    }

    int fd_ = -1;
};

inline std::pair<Stream, Stream> stream_pair() {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0)
        throw IoError(std::string("socketpair failed: ") + std::strerror(errno));
    return {Stream(fds[0]), Stream(fds[1])};
}

inline void send_frame(Stream& s, MsgType type, std::span<const std::uint8_t> body, int timeout_ms) {
    s.write_all(encode_frame(type, body), timeout_ms);
}

// Reads one frame. Header problems raise ProtocolError before the body is
// read; a clean EOF before the first header byte returns false.
inline bool recv_frame(Stream& s, Frame& out, int timeout_ms, std::uint32_t max_body = kDefaultMaxBody) {
    std::uint8_t header[kFrameHeaderSize];
    std::size_t got = s.read_some_exact(header, timeout_ms);
    if (got == 0) return false;
    if (got < kFrameHeaderSize) throw ProtocolError(ErrorCode::malformed, "connection closed inside frame header");
    const FrameHeader h = parse_frame_header(header, max_body);
    out.type = h.type;
    out.body.assign(h.body_length, 0);
    if (s.read_some_exact(out.body, timeout_ms) != h.body_length)
        throw ProtocolError(ErrorCode::malformed, "connection closed inside frame body (body shorter than body_length)");
    return true;
}

// ---- TCP --------------------------------------------------------------------

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
};

inline Endpoint parse_endpoint(const std::string& s) {
    auto colon = s.rfind(':');
    if (colon == std::string::npos) throw ConfigError("expected host:port, got '" + s + "'");
    Endpoint e;
    e.host = s.substr(0, colon);
    if (e.host.empty()) e.host = "0.0.0.0";
    const std::string p = s.substr(colon + 1);
    unsigned long v = 0;
    try {
        std::size_t used = 0;
        v = std::stoul(p, &used);
        if (used != p.size()) throw std::invalid_argument(p);
    } catch (const std::exception&) {
        throw ConfigError("bad port in '" + s + "'");
    }
    if (v > 65535) throw ConfigError("port out of range in '" + s + "'");
    e.port = static_cast<std::uint16_t>(v);
    return e;
}

namespace detail {
inline sockaddr_in resolve_v4(const std::string& host, std::uint16_t port) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1) return addr;
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || !res)
        throw ConnectionError("cannot resolve host '" + host + "'");
    addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    ::freeaddrinfo(res);
    return addr;
}
}  // namespace detail

inline Stream tcp_connect(const Endpoint& ep, int timeout_ms) {
    sockaddr_in addr = detail::resolve_v4(ep.host, ep.port);
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw IoError(std::string("socket failed: ") + std::strerror(errno));
    Stream s(fd);
    // the tv timeout bounds connect() itself
    if (timeout_ms > 0) {
        timeval tv{timeout_ms / 1000, (timeout_ms % 1000) * 1000};
        ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        if (errno == EINPROGRESS || errno == EAGAIN) throw TimeoutError("connect timed out");
        throw ConnectionError("connect to " + ep.host + ":" + std::to_string(ep.port) + " failed: " + std::strerror(errno));
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return s;
}

class Listener {
public:
    explicit Listener(const Endpoint& ep, int backlog = 64) {
        sockaddr_in addr = detail::resolve_v4(ep.host, ep.port);
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) throw IoError(std::string("socket failed: ") + std::strerror(errno));
        int one = 1;
        ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, backlog) != 0) {
            std::string msg = std::strerror(errno);
            ::close(fd_);
            throw IoError("cannot listen on " + ep.host + ":" + std::to_string(ep.port) + ": " + msg);
        }
        socklen_t len = sizeof addr;
        ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
    }
    ~Listener() { close(); }
    Listener(const Listener&) = delete;
    Listener& operator=(const Listener&) = delete;

    std::uint16_t port() const noexcept { return port_; }

    // Waits up to timeout_ms; returns a closed Stream when nothing arrived.
    Stream accept(int timeout_ms) {
        pollfd p{fd_, POLLIN, 0};
        int r = ::poll(&p, 1, timeout_ms);
        if (r <= 0) return {};
        int c = ::accept(fd_, nullptr, nullptr);
        if (c < 0) return {};
        int one = 1;
        ::setsockopt(c, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        return Stream(c);
    }

    void close() noexcept {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

}  // namespace splitnn::runtime
