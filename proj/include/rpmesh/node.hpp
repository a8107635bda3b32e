#pragma once

// A rendezvous-point node: one event-loop state machine binding the overlay
// (join, keep-alive, election, split), the rendezvous actions, the profile
// store, the collection queue, and the rule engine.
//
// The node owns no threads and performs no I/O beyond its injected seams:
//   Transport — sends encoded frames to an endpoint (fire and forget)
//   Clock     — milliseconds, virtual under the simulator
//   TimerHost — one-shot timer callbacks routed back to on_timer()
//   FunctionExecutor — starts/stops user functions
// The owner delivers inbound frames via on_frame() and timer expiries via
// on_timer(), always from a single logical context; the node may be moved
// between threads as a unit between calls.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rpmesh/ar_message.hpp"
#include "rpmesh/mmq.hpp"
#include "rpmesh/overlay.hpp"
#include "rpmesh/store.hpp"
#include "rpmesh/wire.hpp"

namespace rpmesh {

class Transport {
  public:
    virtual ~Transport() = default;
    virtual void send(const std::string& to_endpoint, BytesView frame) = 0;
};

class Clock {
  public:
    virtual ~Clock() = default;
    virtual uint64_t now_ms() = 0;
};

class TimerHost {
  public:
    virtual ~TimerHost() = default;
    // One-shot; the host calls Node::on_timer(token) after delay_ms.
    virtual void set_timer(uint64_t delay_ms, uint64_t token) = 0;
};

class FunctionExecutor {
  public:
    virtual ~FunctionExecutor() = default;
    // Returns an instance handle. Throwing reports FunctionStartFailed.
    virtual uint64_t start(const FunctionRef& fn, const ARMessage& trigger) = 0;
    virtual void stop(uint64_t instance) = 0;
};

// Counts starts/stops without running anything.
class NullExecutor : public FunctionExecutor {
  public:
    uint64_t start(const FunctionRef&, const ARMessage&) override { return ++last_; }
    void stop(uint64_t) override { ++stopped_; }
    uint64_t started() const { return last_; }
    uint64_t stopped() const { return stopped_; }

  private:
    uint64_t last_ = 0;
    uint64_t stopped_ = 0;
};

struct NodeConfig {
    std::string endpoint;
    GeoPoint geo{};
    std::vector<std::string> bootstrap;  // empty = become the first node
    std::string data_dir;
    SpaceConfig space;

    uint32_t capacity = 16;  // ring size above which a region tries to split
    uint32_t n_rep = 3;
    uint64_t keepalive_ms = 2000;
    uint32_t miss_threshold = 3;
    uint64_t join_timeout_ms = 2000;
    uint32_t join_attempts = 3;      // JOIN retries before assuming first-node
    uint64_t rpc_timeout_ms = 1000;  // per-contact budget inside an operation
    uint64_t op_timeout_ms = 5000;   // whole post/lookup budget
    uint32_t lookup_alpha = 3;
    uint32_t bucket_k = 16;
    uint64_t tick_ms = 0;  // 0 = keepalive_ms / 2

    uint64_t rng_seed = 1;  // node-local randomness: id salt, child masters
    std::string rules_text;
    std::vector<std::string> function_allowlist;  // sha256 hex of blobs; empty = deny all

    size_t store_hot_bytes = 8u << 20;
    size_t segment_bytes = 1u << 20;

    // Complex posts use the exact curve covering up to this many index bits;
    // wider spaces fall back to a bounded covering that may deliver to a
    // superset of the responsible set (never misses one).
    uint32_t exact_cover_bits = 16;
    size_t max_cover_segments = 64;
};

struct NodeEvent {
    enum class Kind {
        JoinedRing,
        BecameMaster,
        PostComplete,   // req_id, ok (quorum/delivery), count = acks
        StatsRecord,    // text = one RP status line (from STATISTICS)
        Notice,         // rendezvous notification: profile + text = counterpart endpoint
        QueryData,      // req_id, records = matching stored entries
        LookupDone,     // req_id, members = result set, ok
        PushAcked,      // req_id, count = records acknowledged so far
        PullData,       // req_id, records from the peer's queue
        FunctionStarted,
        FunctionStopped,
        FunctionFailed,
        RuleFired,  // text = callback id
        Fault,      // text = diagnostic
    };
    Kind kind;
    uint64_t req_id = 0;
    bool ok = true;
    uint32_t count = 0;
    std::string text;
    Profile profile;
    std::vector<Member> members;
    std::vector<Bytes> records;
};

struct PulledRecord {
    uint64_t offset = 0;
    uint64_t timestamp_ms = 0;
    std::string stream;
    Bytes payload;
};

// One executed rendezvous action, for delivered-set assertions.
struct ExecutionRecord {
    Digest256 digest{};
    Action action;
};

class Node {
  public:
    Node(NodeConfig cfg, Transport& transport, Clock& clock, TimerHost& timers,
         FunctionExecutor* executor = nullptr);
    ~Node();
    Node(Node&&) noexcept;
    Node& operator=(Node&&) noexcept;

    void start();
    void shutdown();  // flush stores and queue

    // Event-loop entry points (single logical context).
    void on_frame(const std::string& from_endpoint, BytesView frame);
    void on_timer(uint64_t token);

    // Client operations; completion arrives as an event.
    uint64_t post(ARMessage msg);
    uint64_t lookup(const NodeId& target, uint8_t r);
    uint64_t push_stream(const std::string& peer_endpoint, const std::string& stream,
                         std::vector<Bytes> records);

    // Consumption of the local collection queue, at-least-once per consumer.
    std::vector<PulledRecord> pull_local(const std::string& consumer, size_t max_records);
    void commit_local(const std::string& consumer, uint64_t offset);

    std::vector<NodeEvent> take_events();

    // Introspection (tests, CLI, simulator checkpoints).
    const NodeId& id() const;
    const std::string& endpoint() const;
    bool running() const;
    bool is_master() const;
    const Region& region() const;
    const QuadTreeSnapshot& snapshot() const;
    const RoutingTable& routing_table() const;
    Store& store();
    Store& function_store();
    Queue& collection_queue();
    const std::vector<ExecutionRecord>& execution_log() const;
    std::string status_line();
    const NodeConfig& config() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace rpmesh
