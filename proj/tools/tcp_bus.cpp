#include "tcp_bus.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>

#include "rpmesh/errors.hpp"
#include "rpmesh/wire.hpp"

namespace rpmesh::tools {

namespace {

constexpr size_t kMaxConns = 512;           // outbound sends dropped above this
constexpr size_t kMaxInboundBuffer = 4u << 20;

void set_nonblocking(int fd) {
    int flags = fcntl(fd, F_GETFL, 0);
    if (flags >= 0) fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

// Resolves host:port to an IPv4 sockaddr. Returns false when resolution fails.
bool resolve(const std::string& host, uint16_t port, sockaddr_in& out) {
    std::memset(&out, 0, sizeof(out));
    out.sin_family = AF_INET;
    out.sin_port = htons(port);
    if (inet_pton(AF_INET, host.c_str(), &out.sin_addr) == 1) return true;
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || !res) return false;
    out.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    freeaddrinfo(res);
    return true;
}

uint64_t steady_ms() {
    using namespace std::chrono;
    return uint64_t(duration_cast<milliseconds>(steady_clock::now().time_since_epoch()).count());
}

}  // namespace

std::pair<std::string, uint16_t> split_hostport(const std::string& spec) {
    size_t colon = spec.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 >= spec.size())
        throw Error(Errc::ParseError, "expected host:port, got '" + spec + "'");
    unsigned long port = 0;
    try {
        size_t used = 0;
        port = std::stoul(spec.substr(colon + 1), &used);
        if (used != spec.size() - colon - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw Error(Errc::ParseError, "bad port in '" + spec + "'");
    }
    if (port > 65535) throw Error(Errc::ParseError, "port out of range in '" + spec + "'");
    return {spec.substr(0, colon), uint16_t(port)};
}

TcpBus::TcpBus(const std::string& listen_spec) {
    auto [host, want_port] = split_hostport(listen_spec);
    sockaddr_in addr{};
    if (!resolve(host, want_port, addr))
        throw Error(Errc::StreamBroken, "cannot resolve listen host '" + host + "'");
    listen_fd_ = socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw Error(Errc::StreamBroken, "socket: " + std::string(strerror(errno)));
    int one = 1;
    setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        int e = errno;
        close(listen_fd_);
        listen_fd_ = -1;
        throw Error(Errc::StreamBroken,
                    "bind " + listen_spec + ": " + std::string(strerror(e)));
    }
    if (listen(listen_fd_, 64) != 0) {
        int e = errno;
        close(listen_fd_);
        listen_fd_ = -1;
        throw Error(Errc::StreamBroken, "listen: " + std::string(strerror(e)));
    }
    set_nonblocking(listen_fd_);
    sockaddr_in bound{};
    socklen_t blen = sizeof(bound);
    getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &blen);
    port_ = ntohs(bound.sin_port);
    endpoint_ = host + ":" + std::to_string(port_);
}

TcpBus::~TcpBus() {
    if (listen_fd_ >= 0) close(listen_fd_);
    for (Conn& c : conns_)
        if (c.fd >= 0) close(c.fd);
}

void TcpBus::send(const std::string& to_endpoint, BytesView frame) {
    if (conns_.size() >= kMaxConns) return;  // overloaded: drop, peers retry
    std::string host;
    uint16_t port = 0;
    try {
        std::tie(host, port) = split_hostport(to_endpoint);
    } catch (const Error&) {
        return;  // unroutable endpoint string: drop
    }
    sockaddr_in addr{};
    if (!resolve(host, port, addr)) return;
    int fd = socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) return;
    set_nonblocking(fd);
    int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    int rc = connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
    if (rc != 0 && errno != EINPROGRESS) {
        close(fd);
        return;
    }
    Conn c;
    c.fd = fd;
    c.outbound = true;
    c.connected = rc == 0;
    c.out.assign(frame.begin(), frame.end());
    c.peer = to_endpoint;
    conns_.push_back(std::move(c));
}

uint64_t TcpBus::now_ms() { return steady_ms(); }

void TcpBus::set_timer(uint64_t delay_ms, uint64_t token) {
    timers_.push_back({steady_ms() + delay_ms, token});
    std::push_heap(timers_.begin(), timers_.end(),
                   [](const Timer& a, const Timer& b) { return a.due > b.due; });
}

size_t TcpBus::fire_due_timers() {
    size_t fired = 0;
    uint64_t t = steady_ms();
    auto later = [](const Timer& a, const Timer& b) { return a.due > b.due; };
    while (!timers_.empty() && timers_.front().due <= t) {
        std::pop_heap(timers_.begin(), timers_.end(), later);
        uint64_t token = timers_.back().token;
        timers_.pop_back();
        ++fired;
        if (on_timer) on_timer(token);
    }
    return fired;
}

void TcpBus::accept_new() {
    for (;;) {
        sockaddr_in peer{};
        socklen_t plen = sizeof(peer);
        int fd = accept(listen_fd_, reinterpret_cast<sockaddr*>(&peer), &plen);
        if (fd < 0) return;
        set_nonblocking(fd);
        char ip[INET_ADDRSTRLEN] = {0};
        inet_ntop(AF_INET, &peer.sin_addr, ip, sizeof(ip));
        Conn c;
        c.fd = fd;
        c.peer = std::string(ip) + ":" + std::to_string(ntohs(peer.sin_port));
        conns_.push_back(std::move(c));
    }
}

size_t TcpBus::deliver_frames(Conn& c) {
    size_t delivered = 0;
    for (;;) {
        if (c.in.size() < kFrameHeaderBytes) return delivered;
        // Payload length sits in the last four header bytes, big-endian.
        const uint8_t* p = c.in.data() + kFrameHeaderBytes - 4;
        uint32_t len = (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) |
                       uint32_t(p[3]);
        if (len > kMaxFramePayload) {  // not our protocol; stop reading this peer
            c.in.clear();
            c.in.shrink_to_fit();
            return delivered;
        }
        size_t total = kFrameHeaderBytes + len;
        if (c.in.size() < total) return delivered;
        if (on_frame) on_frame(c.peer, BytesView(c.in.data(), total));
        ++delivered;
        c.in.erase(c.in.begin(), c.in.begin() + ptrdiff_t(total));
    }
}

bool TcpBus::service(Conn& c, short revents) {
    if (revents & (POLLERR | POLLHUP | POLLNVAL)) {
        if (c.outbound && !(revents & POLLOUT)) return false;
        if (!c.outbound) {
            // Peer closed; drain whatever already arrived below via read().
        }
    }
    if (c.outbound) {
        if (!c.connected) {
            int err = 0;
            socklen_t elen = sizeof(err);
            getsockopt(c.fd, SOL_SOCKET, SO_ERROR, &err, &elen);
            if (err != 0) return false;  // connect failed: frame dropped
            c.connected = true;
        }
        while (c.out_pos < c.out.size()) {
            ssize_t n = write(c.fd, c.out.data() + c.out_pos, c.out.size() - c.out_pos);
            if (n > 0) {
                c.out_pos += size_t(n);
                continue;
            }
            if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) return true;
            return false;  // broken pipe: frame dropped
        }
        return false;  // fully written: close (one frame per connection)
    }
    // Inbound: read all available, deliver complete frames.
    for (;;) {
        uint8_t buf[16384];
        ssize_t n = read(c.fd, buf, sizeof(buf));
        if (n > 0) {
            if (c.in.size() + size_t(n) > kMaxInboundBuffer) return false;
            c.in.insert(c.in.end(), buf, buf + n);
            continue;
        }
        if (n == 0) {  // EOF
            deliver_frames(c);
            return false;
        }
        if (errno == EAGAIN || errno == EWOULDBLOCK) break;
        return false;
    }
    deliver_frames(c);
    return true;
}

size_t TcpBus::pump(uint64_t max_wait_ms) {
    uint64_t wait = max_wait_ms;
    if (!timers_.empty()) {
        uint64_t t = steady_ms();
        uint64_t until = timers_.front().due > t ? timers_.front().due - t : 0;
        wait = std::min(wait, until);
    }
    std::vector<pollfd> fds;
    fds.reserve(conns_.size() + 1);
    fds.push_back({listen_fd_, POLLIN, 0});
    for (const Conn& c : conns_) {
        short ev = c.outbound ? POLLOUT : POLLIN;
        fds.push_back({c.fd, ev, 0});
    }
    int rc = poll(fds.data(), nfds_t(fds.size()), int(std::min<uint64_t>(wait, 60000)));
    size_t activity = 0;
    if (rc > 0) {
        if (fds[0].revents & POLLIN) accept_new();
        // conns_ may grow during callbacks (sends from node handlers); only
        // the first `fds.size()-1` entries correspond to polled sockets.
        size_t polled = fds.size() - 1;
        for (size_t i = 0; i < polled; ++i) {
            Conn& c = conns_[i];
            short rev = fds[i + 1].revents;
            if (rev == 0) continue;
            size_t before = c.in.size();
            if (!service(c, rev)) {
                close(c.fd);
                c.fd = -1;
            }
            if (c.in.size() != before || rev & POLLIN) ++activity;
        }
        conns_.erase(std::remove_if(conns_.begin(), conns_.end(),
                                    [](const Conn& c) { return c.fd < 0; }),
                     conns_.end());
    }
    activity += fire_due_timers();
    return activity;
}

}  // namespace rpmesh::tools
