#pragma once

// TCP fabric for one daemon or client process: a single listening socket,
// short-lived outbound connections with fire-and-forget frame semantics, a
// monotonic millisecond clock, and one-shot timers — all serviced by one
// poll() loop. Implements the Transport / Clock / TimerHost seams so a Node
// can run unmodified on real sockets.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rpmesh/node.hpp"

namespace rpmesh::tools {

// Splits "host:port" (port may be 0 for ephemeral). Throws
// Error(Errc::ParseError) when the spec is not of that shape.
std::pair<std::string, uint16_t> split_hostport(const std::string& spec);

class TcpBus : public Transport, public Clock, public TimerHost {
  public:
    // Binds and listens on listen_spec; port 0 picks an ephemeral port.
    // Throws Error(Errc::StreamBroken) when the socket cannot be bound.
    explicit TcpBus(const std::string& listen_spec);
    ~TcpBus() override;

    TcpBus(const TcpBus&) = delete;
    TcpBus& operator=(const TcpBus&) = delete;

    // --- seams ---
    void send(const std::string& to_endpoint, BytesView frame) override;
    uint64_t now_ms() override;
    void set_timer(uint64_t delay_ms, uint64_t token) override;

    // Inbound complete frames and timer expiries surface through these.
    std::function<void(const std::string& peer, BytesView frame)> on_frame;
    std::function<void(uint64_t token)> on_timer;

    // One poll() iteration; sleeps at most max_wait_ms when idle. Returns the
    // number of frames delivered plus timers fired.
    size_t pump(uint64_t max_wait_ms);

    uint16_t port() const { return port_; }
    // host:actual-port (the bind host with the resolved port).
    const std::string& endpoint() const { return endpoint_; }

  private:
    struct Conn {
        int fd = -1;
        bool outbound = false;   // write-only: close once out drains
        bool connected = false;  // outbound: connect() completed
        Bytes in;
        Bytes out;
        size_t out_pos = 0;
        std::string peer;
    };
    struct Timer {
        uint64_t due = 0;
        uint64_t token = 0;
    };

    void accept_new();
    bool service(Conn& c, short revents);  // false = close this connection
    size_t deliver_frames(Conn& c);        // returns frames handed to on_frame
    size_t fire_due_timers();

    int listen_fd_ = -1;
    uint16_t port_ = 0;
    std::string endpoint_;
    std::vector<Conn> conns_;
    std::vector<Timer> timers_;  // min-heap by due
};

}  // namespace rpmesh::tools
