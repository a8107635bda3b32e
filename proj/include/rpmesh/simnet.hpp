#pragma once

// Deterministic in-process multi-node harness. Nodes run unmodified: the
// virtual transport, clock, and timer host are injected through the node's
// construction seams, and the whole cluster advances on one event queue
// ordered by (virtual time, submission sequence). The same seed, options,
// and call sequence always produce byte-identical traces.
//
// Loss and partitions are applied only here — nodes have no other channel.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "rpmesh/node.hpp"

namespace rpmesh {

struct SimOptions {
    uint64_t seed = 1;
    uint64_t latency_min_ms = 1;  // per-link latency, uniform in [min, max]
    uint64_t latency_max_ms = 5;
    double loss = 0.0;  // probability an off-node frame never arrives
};

enum class TraceKind : uint8_t { Send, Deliver, Drop, Timer, State };

const char* trace_kind_name(TraceKind k);

struct TraceEvent {
    uint64_t time = 0;
    TraceKind kind = TraceKind::Send;
    std::string src, dst;
    uint8_t frame_type = 0;  // FrameType byte; 0 for timers/state
    uint32_t hops = 0;       // 1 per delivered frame
    uint64_t msg_id = 0;     // pairs Send with Deliver/Drop; timer token
    std::string note;        // drop reason or node-event name
};

using SimTrace = std::vector<TraceEvent>;

// CSV with the columns time,event,src,dst,frame,hops.
std::string trace_csv(const SimTrace& trace);

struct TraceStats {
    uint64_t sends = 0, delivers = 0, drops = 0, timers = 0;
    uint64_t hop_total = 0;          // == delivers
    double mean_latency_ms = 0.0;    // over matched send->deliver pairs
    std::map<std::string, uint64_t> delivered_by_type;
};
TraceStats measure(const SimTrace& trace);

class SimNet {
  public:
    // Node state directories are created under `workdir`/<name>.
    SimNet(SimOptions opts, std::string workdir);
    ~SimNet();

    // Registers a node (endpoint == name). The node is constructed
    // immediately but joins nothing until start(). `executor` may be null.
    Node& add_node(const std::string& name, NodeConfig cfg,
                   FunctionExecutor* executor = nullptr);
    void start(const std::string& name);
    // Drops the node from the network: frames in flight to it are lost, its
    // timers never fire again. State on disk remains for restart().
    void kill(const std::string& name);
    // Rebuilds the node from its saved config and directory; `bootstrap`
    // overrides the original list (empty = keep it).
    Node& restart(const std::string& name, std::vector<std::string> bootstrap = {});

    bool alive(const std::string& name) const;
    Node& node(const std::string& name);  // ScenarioError when absent or dead
    std::vector<std::string> names() const;
    std::vector<std::string> live_names() const;

    uint64_t now() const { return now_; }
    void run_until(uint64_t t_ms);
    void run_for(uint64_t d_ms) { run_until(now_ + d_ms); }
    // Advances until no frame has been delivered for `quiet_ms` of virtual
    // time (timers may still fire) or until `deadline_ms`. True if quiet.
    bool run_until_quiet(uint64_t quiet_ms, uint64_t deadline_ms);

    // Convenience wrappers that also drain node events into the trace.
    uint64_t post_from(const std::string& name, ARMessage msg);
    uint64_t push_from(const std::string& name, const std::string& peer,
                       const std::string& stream, std::vector<Bytes> records);

    // Node events accumulated since the last call (drained after every
    // dispatched frame/timer).
    std::vector<NodeEvent> take_events(const std::string& name);

    // Cuts every link between nodes in different groups (nodes not listed
    // keep full connectivity). Replaces any previous partition.
    void partition(const std::vector<std::vector<std::string>>& groups);
    void heal();

    const SimTrace& trace() const { return trace_; }
    void clear_trace() { trace_.clear(); }
    size_t trace_mark() const { return trace_.size(); }

  private:
    friend struct SimPort;
    struct Harness;

    void submit(const std::string& from, const std::string& to, BytesView frame);
    void schedule_timer(const std::string& name, uint64_t delay, uint64_t token);
    void dispatch_one();
    void drain(Harness& h);
    Harness* find(const std::string& name);

    struct Ev {
        uint64_t time = 0;
        uint64_t seq = 0;
        bool timer = false;
        std::string from, to;
        Bytes frame;
        uint64_t token = 0;
        uint64_t generation = 0;
        uint64_t msg_id = 0;
    };
    struct EvLater {
        bool operator()(const Ev& a, const Ev& b) const {
            return a.time != b.time ? a.time > b.time : a.seq > b.seq;
        }
    };

    SimOptions opts_;
    std::string workdir_;
    std::mt19937_64 rng_;
    uint64_t now_ = 0;
    uint64_t seq_ = 0;
    uint64_t next_msg_ = 0;
    size_t node_ordinal_ = 0;
    std::priority_queue<Ev, std::vector<Ev>, EvLater> queue_;
    std::map<std::string, std::unique_ptr<Harness>> nodes_;
    std::set<std::pair<std::string, std::string>> blocked_;
    SimTrace trace_;
};

// ---- scenario scripting ----
//
// Line-oriented, executed in order ('#' comments, blank lines skipped):
//   at <t> join <node> <lat> <lon>
//   at <t> post <node> <action> <profile> [data...]
//   at <t> kill <node>
//   at <t> heal
//   at <t> partition <a,b,...>|<c,d,...>[|...]
//   at <t> checkpoint
// Times are absolute virtual ms and must be non-decreasing. Steps that need
// a live node (post, kill) throw ScenarioError when it is absent or dead.

struct ScenarioCheckpoint {
    uint64_t time = 0;
    struct NodeState {
        std::string name;
        bool alive = false;
        bool running = false;
        bool master = false;
        std::string path;
        std::string master_id;  // short hex
        uint32_t ring_size = 0;
        GeoPoint geo{};
    };
    std::vector<NodeState> nodes;
};

struct ScenarioResult {
    std::vector<ScenarioCheckpoint> checkpoints;
    std::vector<uint64_t> post_reqs;  // request id per executed post step
};

// `base` supplies everything but endpoint/geo/data_dir/bootstrap/rng_seed,
// which the runner derives per node.
ScenarioResult run_scenario(SimNet& net, const NodeConfig& base, std::string_view script);

}  // namespace rpmesh
