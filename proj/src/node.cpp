#include "rpmesh/node.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <utility>

#include "rpmesh/clusters.hpp"
#include "rpmesh/errors.hpp"
#include "rpmesh/hilbert.hpp"
#include "rpmesh/matching.hpp"
#include "rpmesh/rules.hpp"

namespace rpmesh {
namespace {

constexpr uint64_t kTimerJoin = 1;  // low byte; attempt number in the high bits
constexpr uint64_t kTimerTick = 2;

constexpr uint8_t kAckOk = 0;
constexpr uint8_t kAckFailed = 1;

constexpr size_t kPushBatch = 64;      // records per stream-append frame
constexpr uint8_t kForwardHops = 8;    // routing loop guard
constexpr uint32_t kLookupPullCap = 1024;

// Collection-queue record: tag 1 = stream name, tag 2 = payload. Queue pulls
// append tag 3 = timestamp (ms) and tag 4 = queue offset.
constexpr uint8_t kRecStream = 1;
constexpr uint8_t kRecPayload = 2;
constexpr uint8_t kRecTimestamp = 3;
constexpr uint8_t kRecOffset = 4;

// Query-pull record: one stored entry.
constexpr uint8_t kEntryProfile = 1;
constexpr uint8_t kEntryData = 2;
constexpr uint8_t kEntryStoredAt = 3;
constexpr uint8_t kEntryOrigin = 4;

const char* kRulesConsumer = "rules";

std::string hex16(const Digest256& d) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    for (size_t i = 0; i < 8; ++i) {
        s += digits[d[i] >> 4];
        s += digits[d[i] & 0xf];
    }
    return s;
}

}  // namespace

struct Node::Impl {
    NodeConfig cfg;
    Transport& net;
    Clock& clock;
    TimerHost& timers;
    NullExecutor fallback_exec;
    FunctionExecutor* exec;

    std::mt19937_64 rng;
    Member self;

    enum class Phase { Idle, Booting, Running };
    Phase phase = Phase::Idle;
    uint32_t join_attempt = 0;
    bool tick_armed = false;
    uint64_t started_at = 0;

    Region region;
    QuadTreeSnapshot snap;
    uint64_t ring_version = 0;  // last ring-bearing snapshot accepted from our master
    RoutingTable table;

    std::optional<Store> data_store;
    std::optional<Store> fn_store;
    std::optional<Queue> collect;

    RuleEngine rules;
    Bytes current_rule_payload;  // record being evaluated, becomes posted data

    uint64_t next_req = 1;

    // ---- keep-alive ----
    uint64_t master_seen = 0;
    uint64_t last_ping = 0;
    std::map<NodeId, uint64_t> member_seen;  // master only

    // ---- election ----
    struct Elect {
        bool active = false;
        uint64_t epoch = 0;
        uint32_t phase = 0;
        bool got_left = false, got_right = false;
        uint64_t deadline = 0;
    };
    Elect elect;
    uint64_t seen_epoch = 0;

    // ---- iterative lookup ----
    enum class CState : uint8_t { Fresh, Sent, Done, Failed };
    struct Candidate {
        Member m;
        CState state = CState::Fresh;
        uint64_t sent_at = 0;
    };
    struct LookupOp {
        NodeId target{};
        uint8_t want = 1;
        bool emit_event = false;
        uint64_t started = 0;
        std::vector<Candidate> shortlist;  // sorted by xor distance to target
        std::function<void(std::vector<Member>, bool)> done;
    };
    std::map<uint64_t, LookupOp> lookups;

    // ---- posts ----
    struct PostOp {
        ARMessage msg;
        Action action = Action::STORE;
        bool simple = false;
        bool fanned = false;
        bool delegated = false;     // waiting for the remote coordinator's ack
        std::string reply_to;       // coordinating for a remote client
        uint64_t client_req = 0;
        std::string party;          // endpoint registrations/notices point at
        uint64_t started = 0;
        std::set<NodeId> recipients;
        uint32_t acks = 0, fails = 0;
        uint32_t quorum = 1;
        std::vector<std::string> stats;  // aggregated STATISTICS lines
    };
    std::map<uint64_t, PostOp> posts;

    // ---- pending profile queries (posted NOTIFY_DATA waiting for data) ----
    struct PendingQuery {
        Profile profile;
        uint64_t started = 0;
        std::string source;  // rendezvous point holding matches
        uint64_t pull_sent_at = 0;
    };
    std::map<uint64_t, PendingQuery> queries;

    // ---- rendezvous registrations (this node as a rendezvous point) ----
    struct Registration {
        Profile profile;
        std::string party;  // endpoint to notify
        Digest256 digest{};
    };
    std::vector<Registration> interests;  // producers announcing data
    std::vector<Registration> subs;       // consumers asking for data
    std::set<std::string> notified;       // pair-digest dedup keys

    // ---- functions ----
    struct RunningFn {
        uint64_t instance = 0;
        std::string name;
        Profile profile;  // function entry's key profile
    };
    std::vector<RunningFn> running_fns;
    std::set<std::string> started_keys;  // (entry digest, trigger digest) dedup

    // ---- push sessions (this node as producer) ----
    struct PushSession {
        std::string peer, stream;
        uint64_t base_seq = 0;  // records acknowledged by the receiver
        std::deque<Bytes> buffer;
        uint64_t inflight_req = 0;
        uint64_t inflight_at = 0;
        uint64_t retry_at = 0;
        uint64_t user_req = 0;
    };
    std::map<std::pair<std::string, std::string>, PushSession> pushes;

    std::vector<ExecutionRecord> exec_log;
    std::vector<NodeEvent> events;

    // ------------------------------------------------------------------
    Impl(NodeConfig c, Transport& t, Clock& cl, TimerHost& th, FunctionExecutor* ex)
        : cfg(std::move(c)), net(t), clock(cl), timers(th), exec(ex ? ex : &fallback_exec),
          rng(cfg.rng_seed) {
        cfg.space.validate();
        cfg.geo.validate();
        if (cfg.endpoint.empty()) throw Error(Errc::ProtocolError, "node endpoint must be set");
        if (cfg.data_dir.empty()) throw Error(Errc::ProtocolError, "node data_dir must be set");
        if (cfg.n_rep == 0) throw Error(Errc::ProtocolError, "n_rep must be at least 1");
        self.endpoint = cfg.endpoint;
        self.geo = cfg.geo;
        self.id = derive_node_id(cfg.endpoint, rng());
        table = RoutingTable(self.id, cfg.bucket_k);

        namespace fs = std::filesystem;
        fs::create_directories(fs::path(cfg.data_dir) / "store");
        fs::create_directories(fs::path(cfg.data_dir) / "functions");
        fs::create_directories(fs::path(cfg.data_dir) / "queue");
        StoreOptions so;
        so.space = cfg.space;
        so.hot_capacity_bytes = cfg.store_hot_bytes;
        data_store = Store::open((fs::path(cfg.data_dir) / "store").string(), so);
        fn_store = Store::open((fs::path(cfg.data_dir) / "functions").string(), so);
        QueueOptions qo;
        qo.segment_bytes = cfg.segment_bytes;
        collect = Queue::open((fs::path(cfg.data_dir) / "queue").string(), qo);

        if (!cfg.rules_text.empty()) rules.replace_rules(parse_rule_file(cfg.rules_text));
        rules.set_dispatcher([this](const Rule& r, const DataTuple&) {
            if (r.then.kind == Consequence::Kind::LocalCallback) {
                push_event(NodeEvent::Kind::RuleFired, 0, true, 0, r.then.callback_id);
                return;
            }
            ARMessage m = r.then.message;
            m.data = current_rule_payload;
            post_message(m);  // throws on failure -> counted as dispatch failure
        });
    }

    uint64_t now() { return clock.now_ms(); }
    uint64_t tick_interval() const {
        uint64_t t = cfg.tick_ms ? cfg.tick_ms : cfg.keepalive_ms / 2;
        return t ? t : 1;
    }
    bool master_here() const { return phase == Phase::Running && region.master == self.id; }

    void push_event(NodeEvent::Kind k, uint64_t req = 0, bool ok = true, uint32_t count = 0,
                    std::string text = {}, Profile profile = {}, std::vector<Member> members = {},
                    std::vector<Bytes> records = {}) {
        NodeEvent e;
        e.kind = k;
        e.req_id = req;
        e.ok = ok;
        e.count = count;
        e.text = std::move(text);
        e.profile = std::move(profile);
        e.members = std::move(members);
        e.records = std::move(records);
        events.push_back(std::move(e));
    }

    void send_to(const std::string& ep, FrameType type, Bytes payload) {
        Bytes frame;
        try {
            frame = encode_frame(type, payload, cfg.space);
        } catch (const Error& e) {
            push_event(NodeEvent::Kind::Fault, 0, false, 0, e.what());
            return;
        }
        if (ep == cfg.endpoint) {
            handle_frame(ep, frame);  // loopback: same path as a received frame
            return;
        }
        net.send(ep, frame);
    }

    std::string master_endpoint_here() const {
        if (const Member* m = region.find(region.master)) return m->endpoint;
        if (const RegionMeta* meta = snap.find(region.path)) return meta->master_endpoint;
        return {};
    }

    // Masters of leaves outside the subtree rooted at `exclude_under`.
    std::vector<std::string> other_master_endpoints(const std::string& exclude_under) const {
        std::vector<std::string> out;
        for (const RegionMeta* m : snap.leaves()) {
            if (m->master == self.id || m->master_endpoint.empty()) continue;
            if (m->path.compare(0, exclude_under.size(), exclude_under) == 0 &&
                (exclude_under.empty() || m->path.size() >= exclude_under.size()))
                continue;
            out.push_back(m->master_endpoint);
        }
        return out;
    }

    // ------------------------------------------------------------------ boot
    void start() {
        if (phase != Phase::Idle) return;
        started_at = now();
        if (cfg.bootstrap.empty()) {
            become_root();
        } else {
            phase = Phase::Booting;
            join_attempt = 0;
            send_joins();
        }
    }

    void shutdown() {
        phase = Phase::Idle;
        if (data_store) data_store->flush_index();
        if (fn_store) fn_store->flush_index();
        if (collect) collect->sync();
    }

    void send_joins() {
        ++join_attempt;
        JoinPayload p;
        p.sender = self;
        for (const std::string& ep : cfg.bootstrap)
            if (ep != cfg.endpoint) send_to(ep, FrameType::JOIN, p.encode());
        timers.set_timer(cfg.join_timeout_ms, kTimerJoin | (uint64_t(join_attempt) << 8));
    }

    void become_root() {
        region.path.clear();
        region.box = LatLonBox{};
        region.ring = {self};
        region.master = self.id;
        snap = QuadTreeSnapshot::single_root(self, 1);
        ring_version = snap.version;
        phase = Phase::Running;
        master_seen = now();
        member_seen.clear();
        push_event(NodeEvent::Kind::JoinedRing, 0, true, 1, "/");
        push_event(NodeEvent::Kind::BecameMaster, 0, true, 1, "/");
        arm_tick();
    }

    void arm_tick() {
        if (tick_armed || phase == Phase::Idle) return;
        tick_armed = true;
        timers.set_timer(tick_interval(), kTimerTick);
    }

    void on_timer(uint64_t token) {
        if ((token & 0xff) == kTimerJoin) {
            if (phase == Phase::Booting && (token >> 8) == join_attempt) {
                if (join_attempt >= cfg.join_attempts)
                    become_root();  // nobody answered: assume first node
                else
                    send_joins();
            }
            return;
        }
        if ((token & 0xff) == kTimerTick) {
            tick_armed = false;
            if (phase == Phase::Idle) return;
            do_tick();
            arm_tick();
        }
    }

    // ------------------------------------------------------------------ tick
    void do_tick() {
        uint64_t t = now();
        if (phase == Phase::Running) {
            keepalive_tick(t);
            election_tick(t);
        }
        lookup_tick(t);
        post_tick(t);
        query_tick(t);
        push_tick(t);
    }

    void keepalive_tick(uint64_t t) {
        if (master_here()) {
            sweep_members(t);
            return;
        }
        if (t - last_ping >= cfg.keepalive_ms) {
            std::string ep = master_endpoint_here();
            if (!ep.empty()) {
                PingPayload p;
                p.sender = self;
                p.path = region.path;
                send_to(ep, FrameType::PING, p.encode());
                last_ping = t;
            }
        }
        if (!elect.active && master_seen &&
            t - master_seen > uint64_t(cfg.miss_threshold) * cfg.keepalive_ms)
            start_election(t);
    }

    void sweep_members(uint64_t t) {
        std::vector<NodeId> dead;
        for (const Member& m : region.ring) {
            if (m.id == self.id) continue;
            uint64_t& seen = member_seen[m.id];
            if (seen == 0) seen = t;
            if (t - seen > uint64_t(cfg.miss_threshold) * cfg.keepalive_ms) dead.push_back(m.id);
        }
        if (dead.empty()) return;
        for (const NodeId& id : dead) {
            region.remove(id);
            table.remove(id);
            member_seen.erase(id);
        }
        bump_ring_meta();
        broadcast_membership();
    }

    void bump_ring_meta() {
        ++snap.version;
        auto it = snap.regions.find(region.path);
        if (it != snap.regions.end()) {
            it->second.ring_size = uint32_t(region.ring.size());
            it->second.master = region.master;
            it->second.master_endpoint = master_endpoint_here();
        }
    }

    void broadcast_membership() {
        SnapshotPayload p;
        p.sender = self;
        p.snapshot = snap;
        p.ring_path = region.path;
        p.ring = region.ring;
        Bytes enc = p.encode();
        for (const Member& m : region.ring)
            if (m.id != self.id) send_to(m.endpoint, FrameType::SNAPSHOT, enc);
        broadcast_tree();
    }

    void broadcast_tree() {
        SnapshotPayload p;
        p.sender = self;
        p.snapshot = snap;  // ring_path stays "-": tree only
        Bytes enc = p.encode();
        for (const std::string& ep : other_master_endpoints(region.path))
            send_to(ep, FrameType::SNAPSHOT, enc);
    }

    // ------------------------------------------------------------------ frames
    void handle_frame(const std::string& from, BytesView bytes) {
        Frame f;
        try {
            f = decode_frame(bytes, cfg.space);
        } catch (const Error& e) {
            push_event(NodeEvent::Kind::Fault, 0, false, 0, e.what());
            return;
        }
        try {
            dispatch(from, f);
        } catch (const Error& e) {
            push_event(NodeEvent::Kind::Fault, 0, false, 0,
                       std::string(frame_type_name(f.type)) + ": " + e.what());
        } catch (const std::exception& e) {
            push_event(NodeEvent::Kind::Fault, 0, false, 0,
                       std::string(frame_type_name(f.type)) + ": " + e.what());
        }
    }

    void dispatch(const std::string& from, const Frame& f) {
        if (phase == Phase::Idle) return;
        if (phase == Phase::Booting) {
            // A ring snapshot naming us can overtake the join ack (the master
            // may split immediately after accepting); both complete the join.
            if (f.type == FrameType::JOIN_ACK) on_join_ack(JoinAckPayload::decode(f.payload));
            else if (f.type == FrameType::SNAPSHOT) on_snapshot(SnapshotPayload::decode(f.payload));
            return;  // everything else waits until we are in a ring
        }
        switch (f.type) {
            case FrameType::JOIN: on_join(JoinPayload::decode(f.payload)); break;
            case FrameType::JOIN_ACK:  // refresh after a stale-view re-join
                on_join_ack(JoinAckPayload::decode(f.payload));
                break;
            case FrameType::PING: on_ping(PingPayload::decode(f.payload)); break;
            case FrameType::PONG: on_pong(PongPayload::decode(f.payload)); break;
            case FrameType::LOOKUP: on_lookup(LookupPayload::decode(f.payload)); break;
            case FrameType::LOOKUP_ACK: on_lookup_ack(LookupAckPayload::decode(f.payload)); break;
            case FrameType::ELECT_PROBE: on_probe(ElectProbePayload::decode(f.payload)); break;
            case FrameType::ELECT_REPLY: on_reply(ElectReplyPayload::decode(f.payload)); break;
            case FrameType::ELECT_WIN: on_win(ElectWinPayload::decode(f.payload)); break;
            case FrameType::SNAPSHOT: on_snapshot(SnapshotPayload::decode(f.payload)); break;
            case FrameType::FORWARD: on_forward(ForwardPayload::decode(f.payload), from); break;
            case FrameType::STORE: on_deliver(DeliverPayload::decode(f.payload)); break;
            case FrameType::STORE_ACK: on_ack(AckPayload::decode(f.payload)); break;
            case FrameType::PUSH: on_push(PushPayload::decode(f.payload)); break;
            case FrameType::PULL: on_pull(PullPayload::decode(f.payload)); break;
        }
    }

    // ------------------------------------------------------------------ join
    void on_join(const JoinPayload& p) {
        if (p.sender.id == self.id && p.sender.endpoint == self.endpoint) return;
        if (!master_here()) {
            forward_frame(region.path, encode_frame(FrameType::JOIN, p.encode(), cfg.space),
                          p.sender);
            return;
        }
        const RegionMeta* leaf = snap.leaf_for(p.sender.geo);
        if (leaf && leaf->path != region.path) {
            ForwardPayload f;
            f.sender = p.sender;
            f.dest_path = leaf->path;
            f.hops_left = kForwardHops;
            f.inner = encode_frame(FrameType::JOIN, p.encode(), cfg.space);
            send_to(leaf->master_endpoint, FrameType::FORWARD, f.encode());
            return;
        }
        accept_member(p.sender);
    }

    void accept_member(const Member& joiner) {
        const Member* existing = region.find(joiner.id);
        if (existing && existing->endpoint != joiner.endpoint) {
            JoinAckPayload nak;
            nak.sender = self;
            nak.status = 1;  // id collision: joiner re-salts and retries
            send_to(joiner.endpoint, FrameType::JOIN_ACK, nak.encode());
            return;
        }
        if (existing) region.remove(joiner.id);  // refresh geo/endpoint
        region.add(joiner);
        table.insert(joiner);
        member_seen[joiner.id] = now();
        bump_ring_meta();

        JoinAckPayload ack;
        ack.sender = self;
        ack.status = 0;
        ack.region = region;
        ack.snapshot = snap;
        send_to(joiner.endpoint, FrameType::JOIN_ACK, ack.encode());

        SnapshotPayload bc;
        bc.sender = self;
        bc.snapshot = snap;
        bc.ring_path = region.path;
        bc.ring = region.ring;
        Bytes enc = bc.encode();
        for (const Member& m : region.ring)
            if (m.id != self.id && m.id != joiner.id) send_to(m.endpoint, FrameType::SNAPSHOT, enc);
        broadcast_tree();
        maybe_split();
    }

    void on_join_ack(const JoinAckPayload& p) {
        if (p.status == 1) {
            self.id = derive_node_id(cfg.endpoint, rng());
            table = RoutingTable(self.id, cfg.bucket_k);
            send_joins();
            return;
        }
        bool refresh = phase == Phase::Running;  // re-join after a stale view
        if (refresh && p.snapshot.version < ring_version) return;  // raced newer ring state
        ring_version = p.snapshot.version;
        region = p.region;
        std::sort(region.ring.begin(), region.ring.end(),
                  [](const Member& a, const Member& b) { return a.id < b.id; });
        if (!region.find(self.id)) region.add(self);
        if (refresh) {
            adopt_tree(p.snapshot);
            // The master's row for our own ring is authoritative on a refresh.
            if (const RegionMeta* m = p.snapshot.find(region.path))
                snap.regions[region.path] = *m;
        } else {
            snap = p.snapshot;
        }
        rebuild_table();
        phase = Phase::Running;
        master_seen = now();
        last_ping = now();
        if (!refresh)
            push_event(NodeEvent::Kind::JoinedRing, 0, true, uint32_t(region.ring.size()),
                       region.path.empty() ? "/" : region.path);
        arm_tick();
    }

    void rebuild_table() {
        table = RoutingTable(self.id, cfg.bucket_k);
        for (const Member& m : region.ring)
            if (m.id != self.id) table.insert(m);
    }

    // ------------------------------------------------------------------ keep-alive
    void on_ping(const PingPayload& p) {
        PongPayload r;
        r.sender = self;
        r.path = region.path;
        r.snapshot_version = snap.version;
        send_to(p.sender.endpoint, FrameType::PONG, r.encode());
        if (!master_here()) return;
        if (region.find(p.sender.id)) {
            member_seen[p.sender.id] = now();
        } else if (p.path == region.path && region.box.contains(p.sender.geo)) {
            accept_member(p.sender);  // heals a member we evicted but which is alive
        }
    }

    void on_pong(const PongPayload& p) {
        if (p.sender.id != region.master) return;
        master_seen = now();
        // A lost membership broadcast leaves this view stale. The master's
        // snapshot version rides on every pong; when it is ahead, re-join to
        // pull the full ring state (accepting an existing member refreshes).
        if (p.snapshot_version > snap.version) {
            JoinPayload j;
            j.sender = self;
            send_to(p.sender.endpoint, FrameType::JOIN, j.encode());
        }
    }

    // ------------------------------------------------------------------ election
    std::vector<NodeId> live_ids() const {
        std::vector<NodeId> ids;
        for (const Member& m : region.ring)
            if (m.id != region.master) ids.push_back(m.id);
        return ids;
    }

    const Member* member_by_id(const NodeId& id) const { return region.find(id); }

    void start_election(uint64_t t) {
        if (master_here()) return;
        auto ids = live_ids();
        if (std::find(ids.begin(), ids.end(), self.id) == ids.end()) return;
        start_election_epoch(t, std::max(seen_epoch, elect.epoch) + 1);
    }

    void start_election_epoch(uint64_t t, uint64_t epoch) {
        elect.active = true;
        elect.epoch = epoch;
        seen_epoch = std::max(seen_epoch, epoch);
        elect.phase = 0;
        elect.got_left = elect.got_right = false;
        elect.deadline = t + uint64_t(cfg.miss_threshold) * cfg.keepalive_ms;
        auto ids = live_ids();
        if (ids.size() <= 1) {
            finish_win();
            return;
        }
        send_probes();
    }

    void send_probes() {
        auto ids = live_ids();
        RingNeighbours nb = ring_neighbours(ids, self.id);
        uint64_t hops = uint64_t(1) << elect.phase;
        for (uint8_t dir = 0; dir < 2; ++dir) {
            const Member* next = member_by_id(dir == 0 ? nb.left : nb.right);
            if (!next) continue;
            ElectProbePayload p;
            p.candidate = self;
            p.path = region.path;
            p.epoch = elect.epoch;
            p.phase = elect.phase;
            p.hops_left = hops;
            p.dir = dir;
            send_to(next->endpoint, FrameType::ELECT_PROBE, p.encode());
        }
    }

    void on_probe(const ElectProbePayload& p) {
        if (p.path != region.path || master_here()) return;
        if (p.epoch < elect.epoch) return;
        seen_epoch = std::max(seen_epoch, p.epoch);
        if (p.epoch > elect.epoch || !elect.active)
            start_election_epoch(now(), p.epoch);  // infection: join this round
        if (!elect.active) return;                 // we won instantly (ring of one)
        if (p.candidate.id == self.id) {
            finish_win();  // our probe circled the whole ring unswallowed
            return;
        }
        if (p.candidate.id < self.id) return;  // swallowed: our candidacy dominates
        if (p.hops_left > 1) {
            auto ids = live_ids();
            RingNeighbours nb = ring_neighbours(ids, self.id);
            const Member* next = member_by_id(p.dir == 0 ? nb.left : nb.right);
            if (!next) return;
            ElectProbePayload fwd = p;
            fwd.hops_left = p.hops_left - 1;
            send_to(next->endpoint, FrameType::ELECT_PROBE, fwd.encode());
        } else {
            ElectReplyPayload r;
            r.sender = self;
            r.path = region.path;
            r.epoch = p.epoch;
            r.candidate = p.candidate.id;
            r.phase = p.phase;
            r.dir = p.dir;
            send_to(p.candidate.endpoint, FrameType::ELECT_REPLY, r.encode());
        }
    }

    void on_reply(const ElectReplyPayload& r) {
        if (!elect.active || r.epoch != elect.epoch) return;
        if (r.candidate != self.id || r.phase != elect.phase) return;
        if (r.dir == 0)
            elect.got_left = true;
        else
            elect.got_right = true;
        if (elect.got_left && elect.got_right) {
            ++elect.phase;
            elect.got_left = elect.got_right = false;
            send_probes();
        }
    }

    void finish_win() {
        NodeId old_master = region.master;
        std::vector<Member> live;
        for (const Member& m : region.ring)
            if (m.id != old_master) live.push_back(m);
        region.ring = live;
        region.master = self.id;
        table.remove(old_master);
        bump_ring_meta();
        member_seen.clear();
        uint64_t t = now();
        for (const Member& m : region.ring)
            if (m.id != self.id) member_seen[m.id] = t;
        elect.active = false;
        push_event(NodeEvent::Kind::BecameMaster, 0, true, uint32_t(region.ring.size()),
                   region.path.empty() ? "/" : region.path);

        ElectWinPayload w;
        w.winner = self;
        w.path = region.path;
        w.epoch = elect.epoch;
        w.ring = region.ring;
        w.snapshot = snap;
        Bytes enc = w.encode();
        for (const Member& m : region.ring)
            if (m.id != self.id) send_to(m.endpoint, FrameType::ELECT_WIN, enc);
        broadcast_tree();
    }

    void on_win(const ElectWinPayload& p) {
        seen_epoch = std::max(seen_epoch, p.epoch);
        if (p.path != region.path) {
            adopt_tree(p.snapshot);
            return;
        }
        if (p.winner.id == self.id) return;
        bool known = false;
        for (const Member& m : p.ring) known = known || m.id == self.id;
        adopt_tree(p.snapshot);
        if (!known) {
            // The winner thinks we are dead; rejoin through it.
            phase = Phase::Booting;
            join_attempt = 0;
            cfg.bootstrap = {p.winner.endpoint};
            send_joins();
            return;
        }
        region.ring = p.ring;
        std::sort(region.ring.begin(), region.ring.end(),
                  [](const Member& a, const Member& b) { return a.id < b.id; });
        region.master = p.winner.id;
        rebuild_table();
        elect.active = false;
        master_seen = now();
    }

    void election_tick(uint64_t t) {
        if (!elect.active || t < elect.deadline) return;
        start_election_epoch(t, std::max(seen_epoch, elect.epoch) + 1);  // retry
    }

    // ------------------------------------------------------------------ snapshots
    void adopt_tree(const QuadTreeSnapshot& s) {
        // Splits are irreversible, so tree structure merges monotonically:
        // unknown rows and leaf->internal transitions are always adopted.
        // Row data (master, ring size) follows the higher version, except
        // our own region's row — a foreign master cannot know about our most
        // recent election or membership change.
        bool newer = s.version > snap.version;
        for (const auto& [path, meta] : s.regions) {
            auto mine = snap.regions.find(path);
            if (mine == snap.regions.end()) {
                snap.regions.emplace(path, meta);
            } else if (mine->second.leaf && !meta.leaf) {
                mine->second = meta;  // that leaf was split elsewhere
            } else if (newer && path != region.path && !(!mine->second.leaf && meta.leaf)) {
                mine->second = meta;
            }
        }
        snap.version = std::max(snap.version, s.version);
    }

    void on_snapshot(const SnapshotPayload& p) {
        if (!p.has_ring()) {
            adopt_tree(p.snapshot);
            return;
        }
        bool includes_me = false;
        for (const Member& m : p.ring) includes_me = includes_me || m.id == self.id;
        if (!includes_me) {
            adopt_tree(p.snapshot);
            if (p.ring_path == region.path && p.sender.id == region.master) {
                // The master evicted us but we are alive: rejoin.
                phase = Phase::Booting;
                join_attempt = 0;
                cfg.bootstrap = {p.sender.endpoint};
                send_joins();
            }
            return;
        }
        // Ring snapshots from our master's lineage are totally ordered by
        // version; a pre-split broadcast must never overtake the split state.
        if (p.snapshot.version < ring_version) return;
        ring_version = p.snapshot.version;
        bool booting = phase != Phase::Running;
        adopt_tree(p.snapshot);
        region.path = p.ring_path;
        if (const RegionMeta* meta = p.snapshot.find(p.ring_path)) {
            region.box = meta->box;
            region.master = meta->master;
            snap.regions[region.path] = *meta;  // our ring's row follows its master
        }
        region.ring = p.ring;
        std::sort(region.ring.begin(), region.ring.end(),
                  [](const Member& a, const Member& b) { return a.id < b.id; });
        rebuild_table();
        elect.active = false;
        phase = Phase::Running;
        last_ping = now();
        if (booting)
            push_event(NodeEvent::Kind::JoinedRing, 0, true, uint32_t(region.ring.size()),
                       region.path.empty() ? "/" : region.path);
        if (region.master == self.id) {
            uint64_t t = now();
            for (const Member& m : region.ring)
                if (m.id != self.id && !member_seen.count(m.id)) member_seen[m.id] = t;
            push_event(NodeEvent::Kind::BecameMaster, 0, true, uint32_t(region.ring.size()),
                       region.path);
        } else {
            member_seen.clear();
            master_seen = now();
        }
        if (booting) arm_tick();
    }

    // ------------------------------------------------------------------ split
    void maybe_split() {
        while (master_here() && region.ring.size() > cfg.capacity && region.path.size() < 24) {
            std::array<std::vector<Member>, 4> groups;
            for (const Member& m : region.ring) groups[region.box.quadrant_of(m.geo)].push_back(m);
            bool viable = true;
            for (const auto& g : groups) viable = viable && g.size() >= cfg.n_rep;
            if (!viable) return;

            std::vector<RegionMeta> children(4);
            for (uint32_t d = 0; d < 4; ++d) {
                const Member& boss = groups[d][rng() % groups[d].size()];
                children[d].path = region.path + char('0' + d);
                children[d].box = region.box.quadrant_box(d);
                children[d].leaf = true;
                children[d].master = boss.id;
                children[d].master_endpoint = boss.endpoint;
                children[d].ring_size = uint32_t(groups[d].size());
            }
            std::string old_path = region.path;
            snap.apply_split(old_path, children);

            uint32_t mine = region.box.quadrant_of(self.geo);
            for (uint32_t d = 0; d < 4; ++d) {
                SnapshotPayload p;
                p.sender = self;
                p.snapshot = snap;
                p.ring_path = children[d].path;
                p.ring = groups[d];
                Bytes enc = p.encode();
                for (const Member& m : groups[d])
                    if (m.id != self.id) send_to(m.endpoint, FrameType::SNAPSHOT, enc);
            }
            // Tree-only update for masters outside the subtree we just split.
            {
                SnapshotPayload p;
                p.sender = self;
                p.snapshot = snap;
                Bytes enc = p.encode();
                for (const std::string& ep : other_master_endpoints(old_path))
                    send_to(ep, FrameType::SNAPSHOT, enc);
            }

            region.path = children[mine].path;
            region.box = children[mine].box;
            region.ring = groups[mine];
            std::sort(region.ring.begin(), region.ring.end(),
                      [](const Member& a, const Member& b) { return a.id < b.id; });
            region.master = children[mine].master;
            rebuild_table();
            member_seen.clear();
            if (region.master == self.id) {
                uint64_t t = now();
                for (const Member& m : region.ring)
                    if (m.id != self.id) member_seen[m.id] = t;
                push_event(NodeEvent::Kind::BecameMaster, 0, true, uint32_t(region.ring.size()),
                           region.path);
            } else {
                master_seen = now();
            }
        }
    }

    // ------------------------------------------------------------------ forward
    void forward_frame(const std::string& dest_path, Bytes inner, const Member& origin) {
        ForwardPayload f;
        f.sender = origin;
        f.dest_path = dest_path;
        f.hops_left = kForwardHops;
        f.inner = std::move(inner);
        std::string ep = master_endpoint_here();
        if (ep.empty()) return;
        send_to(ep, FrameType::FORWARD, f.encode());
    }

    void on_forward(const ForwardPayload& f, const std::string& from) {
        (void)from;
        if (f.hops_left == 0) return;
        if (f.dest_path == region.path) {
            if (master_here()) {
                handle_frame(f.sender.endpoint, f.inner);
            } else {
                ForwardPayload n = f;
                n.hops_left = f.hops_left - 1;
                std::string ep = master_endpoint_here();
                if (!ep.empty()) send_to(ep, FrameType::FORWARD, n.encode());
            }
            return;
        }
        const RegionMeta* meta = snap.find(f.dest_path);
        if (meta && meta->leaf && !meta->master_endpoint.empty()) {
            ForwardPayload n = f;
            n.hops_left = f.hops_left - 1;
            send_to(meta->master_endpoint, FrameType::FORWARD, n.encode());
            return;
        }
        // Stale or split destination: let the inner frame's own handler
        // re-resolve (JOIN and client posts both re-route by geography).
        handle_frame(f.sender.endpoint, f.inner);
    }

    // ------------------------------------------------------------------ lookup
    uint64_t start_lookup(const NodeId& target, uint8_t want, bool emit,
                          std::function<void(std::vector<Member>, bool)> done) {
        uint64_t req = next_req++;
        LookupOp op;
        op.target = target;
        op.want = want ? want : 1;
        op.emit_event = emit;
        op.started = now();
        op.done = std::move(done);
        Candidate me;
        me.m = self;
        me.state = CState::Done;
        op.shortlist.push_back(me);
        for (const Member& m : table.closest(target, size_t(op.want) + 2 * cfg.lookup_alpha)) {
            Candidate c;
            c.m = m;
            op.shortlist.push_back(c);
        }
        sort_shortlist(op);
        auto [it, ok] = lookups.emplace(req, std::move(op));
        (void)ok;
        lookup_step(req);
        return req;
    }

    void sort_shortlist(LookupOp& op) {
        std::sort(op.shortlist.begin(), op.shortlist.end(),
                  [&](const Candidate& a, const Candidate& b) {
                      return xor_closer(a.m.id, b.m.id, op.target);
                  });
    }

    void lookup_step(uint64_t req) {
        auto it = lookups.find(req);
        if (it == lookups.end()) return;
        LookupOp& op = it->second;

        size_t inflight = 0;
        for (const Candidate& c : op.shortlist) inflight += c.state == CState::Sent;
        for (Candidate& c : op.shortlist) {
            if (inflight >= cfg.lookup_alpha) break;
            if (c.state != CState::Fresh) continue;
            LookupPayload p;
            p.sender = self;
            p.lookup_id = req;
            p.target = op.target;
            p.want = op.want;
            c.state = CState::Sent;
            c.sent_at = now();
            ++inflight;
            send_to(c.m.endpoint, FrameType::LOOKUP, p.encode());
        }

        // Finished when the closest `want` live candidates have all answered.
        size_t seen = 0;
        bool all_done = true;
        bool any_pending = false;
        for (const Candidate& c : op.shortlist) {
            if (c.state == CState::Failed) continue;
            if (seen < op.want) {
                all_done = all_done && c.state == CState::Done;
                ++seen;
            }
            any_pending = any_pending || c.state == CState::Fresh || c.state == CState::Sent;
        }
        if ((seen && all_done) || !any_pending) finish_lookup(req);
    }

    void finish_lookup(uint64_t req) {
        auto it = lookups.find(req);
        if (it == lookups.end()) return;
        LookupOp op = std::move(it->second);
        lookups.erase(it);
        std::vector<Member> result;
        for (const Candidate& c : op.shortlist) {
            if (result.size() >= op.want) break;
            if (c.state == CState::Done) result.push_back(c.m);
        }
        bool ok = !result.empty();
        if (op.emit_event)
            push_event(NodeEvent::Kind::LookupDone, req, ok, uint32_t(result.size()), {}, {},
                       result);
        if (op.done) op.done(std::move(result), ok);
    }

    void on_lookup(const LookupPayload& p) {
        table.insert(p.sender);
        std::vector<Member> contacts = table.closest(p.target, p.want);
        contacts.push_back(self);
        std::sort(contacts.begin(), contacts.end(), [&](const Member& a, const Member& b) {
            return xor_closer(a.id, b.id, p.target);
        });
        if (contacts.size() > p.want) contacts.resize(p.want);
        LookupAckPayload r;
        r.sender = self;
        r.lookup_id = p.lookup_id;
        r.contacts = std::move(contacts);
        send_to(p.sender.endpoint, FrameType::LOOKUP_ACK, r.encode());
    }

    void on_lookup_ack(const LookupAckPayload& p) {
        table.insert(p.sender);
        auto it = lookups.find(p.lookup_id);
        if (it == lookups.end()) return;
        LookupOp& op = it->second;
        for (Candidate& c : op.shortlist)
            if (c.m.id == p.sender.id && c.state == CState::Sent) c.state = CState::Done;
        for (const Member& m : p.contacts) {
            if (m.id == self.id) continue;
            table.insert(m);
            bool known = false;
            for (const Candidate& c : op.shortlist) known = known || c.m.id == m.id;
            if (!known) {
                Candidate c;
                c.m = m;
                op.shortlist.push_back(c);
            }
        }
        sort_shortlist(op);
        lookup_step(p.lookup_id);
    }

    void lookup_tick(uint64_t t) {
        std::vector<uint64_t> expired;
        for (auto& [req, op] : lookups) {
            for (Candidate& c : op.shortlist)
                if (c.state == CState::Sent && t - c.sent_at > cfg.rpc_timeout_ms)
                    c.state = CState::Failed;
            if (t - op.started > cfg.op_timeout_ms) expired.push_back(req);
        }
        for (uint64_t req : expired) finish_lookup(req);
        // Failed candidates may unblock the next wave.
        std::vector<uint64_t> live;
        for (auto& [req, op] : lookups) live.push_back(req);
        for (uint64_t req : live) lookup_step(req);
    }

    // ------------------------------------------------------------------ posts
    std::vector<Segment> covering(const AxisBox& box) const {
        size_t max_segments =
            cfg.space.index_bits() <= cfg.exact_cover_bits ? 0 : cfg.max_cover_segments;
        return clusters_for_box(box, cfg.space, max_segments);
    }

    uint64_t post_message(ARMessage msg) {
        if (phase != Phase::Running) throw Error(Errc::PostFailed, "node is not in a ring");
        if (msg.location) msg.location->validate();
        uint64_t req = next_req++;
        start_post(req, std::move(msg), {}, 0, cfg.endpoint);
        return req;
    }

    void fail_post(uint64_t req, const std::string& reply_to, uint64_t client_req,
                   const std::string& why) {
        posts.erase(req);
        queries.erase(req);
        if (reply_to.empty()) {
            push_event(NodeEvent::Kind::PostComplete, req, false, 0, why);
        } else {
            AckPayload a;
            a.sender = self;
            a.req_id = client_req;
            a.status = kAckFailed;
            a.info = why;
            send_to(reply_to, FrameType::STORE_ACK, a.encode());
        }
    }

    void start_post(uint64_t req, ARMessage msg, const std::string& reply_to, uint64_t client_req,
                    const std::string& party) {
        uint64_t t = now();
        if (msg.action == Action::NOTIFY_DATA && reply_to.empty()) {
            PendingQuery q;
            q.profile = msg.profile;
            q.started = t;
            queries[req] = std::move(q);
        }

        GeoPoint where = msg.location.value_or(self.geo);
        const RegionMeta* leaf = snap.leaf_for(where);
        if (leaf && leaf->path != region.path && !leaf->master_endpoint.empty()) {
            delegate_post(req, std::move(msg), reply_to, client_req, party, *leaf);
            return;
        }

        Target target;
        try {
            target = profile_to_target(msg.profile, cfg.space);
        } catch (const Error& e) {
            fail_post(req, reply_to, client_req, e.what());
            return;
        }

        PostOp op;
        op.action = msg.action;
        op.simple = target.is_point;
        op.msg = std::move(msg);
        op.reply_to = reply_to;
        op.client_req = client_req;
        op.party = party;
        op.started = t;

        if (target.is_point) {
            uint64_t index = hilbert_encode(target.point, cfg.space.bits);
            NodeId key = scaled_key(index, cfg.space.index_bits());
            posts.emplace(req, std::move(op));
            start_lookup(key, uint8_t(std::min<uint32_t>(cfg.n_rep, 255)), false,
                         [this, req](std::vector<Member> ms, bool) { fanout(req, ms); });
        } else {
            std::vector<Segment> segments = covering(target.box);
            std::vector<NodeId> ids =
                responsible_union(region.ids(), segments, cfg.space.index_bits(), cfg.n_rep);
            std::vector<Member> ms;
            for (const NodeId& id : ids)
                if (const Member* m = region.find(id)) ms.push_back(*m);
            posts.emplace(req, std::move(op));
            fanout(req, ms);
        }
    }

    void delegate_post(uint64_t req, ARMessage msg, const std::string& reply_to,
                       uint64_t client_req, const std::string& party, const RegionMeta& leaf) {
        DeliverPayload d;
        d.sender = self;
        d.kind = DeliverKind::ClientPost;
        d.msg = std::move(msg);
        d.aux = party;
        if (reply_to.empty()) {
            // We are the client's node: remember the op and await the
            // aggregate ack from the destination coordinator.
            d.req_id = req;
            PostOp op;
            op.action = d.msg.action;
            op.msg = d.msg;
            op.delegated = true;
            op.party = party;
            op.started = now();
            posts.emplace(req, std::move(op));
        } else {
            // Relaying a remote client's post: the final coordinator acks the
            // client directly.
            d.sender.id = NodeId{};
            d.sender.endpoint = reply_to;
            d.req_id = client_req;
            posts.erase(req);
        }
        ForwardPayload f;
        f.sender = self;
        f.dest_path = leaf.path;
        f.hops_left = kForwardHops;
        f.inner = encode_frame(FrameType::STORE, d.encode(), cfg.space);
        std::string ep = master_here() ? leaf.master_endpoint : master_endpoint_here();
        if (ep.empty()) ep = leaf.master_endpoint;
        send_to(ep, FrameType::FORWARD, f.encode());
    }

    void fanout(uint64_t req, const std::vector<Member>& members) {
        auto it = posts.find(req);
        if (it == posts.end()) return;
        PostOp& op = it->second;
        if (members.empty()) {
            std::string why = "no responsible node reachable";
            std::string reply_to = op.reply_to;
            uint64_t client_req = op.client_req;
            fail_post(req, reply_to, client_req, why);
            return;
        }
        op.recipients.clear();
        for (const Member& m : members) op.recipients.insert(m.id);
        op.quorum = op.simple && op.action == Action::STORE
                        ? (cfg.n_rep + 2) / 2
                        : uint32_t(op.recipients.size());
        op.fanned = true;

        DeliverPayload d;
        d.sender = self;
        d.req_id = req;
        d.kind = DeliverKind::Execute;
        d.msg = op.msg;
        d.aux = op.party;
        Bytes enc = d.encode();
        for (const Member& m : members) {
            if (!posts.count(req)) break;  // completed early via loopback acks
            send_to(m.endpoint, FrameType::STORE, enc);
        }
        check_post_done(req);
    }

    void check_post_done(uint64_t req) {
        auto it = posts.find(req);
        if (it == posts.end()) return;
        PostOp& op = it->second;
        if (!op.fanned) return;
        bool all = op.acks + op.fails >= op.recipients.size();
        bool quorum = op.acks >= op.quorum;
        if (all || quorum) complete_post(req);
    }

    void complete_post(uint64_t req) {
        auto it = posts.find(req);
        if (it == posts.end()) return;
        PostOp op = std::move(it->second);
        posts.erase(it);
        bool ok = op.acks >= op.quorum;
        std::string text;
        if (!ok && op.acks > 0 && op.action == Action::STORE) text = "replication degraded";
        if (op.reply_to.empty()) {
            push_event(NodeEvent::Kind::PostComplete, req, ok, op.acks, text, op.msg.profile);
        } else {
            AckPayload a;
            a.sender = self;
            a.req_id = op.client_req;
            a.status = ok ? kAckOk : kAckFailed;
            a.count = op.acks;
            std::string info;
            for (const std::string& s : op.stats) {
                if (!info.empty()) info += '\n';
                info += s;
            }
            if (info.empty()) info = text;
            a.info = std::move(info);
            send_to(op.reply_to, FrameType::STORE_ACK, a.encode());
        }
    }

    void post_tick(uint64_t t) {
        std::vector<uint64_t> expired;
        for (auto& [req, op] : posts)
            if (t - op.started > cfg.op_timeout_ms) expired.push_back(req);
        for (uint64_t req : expired) complete_post(req);
    }

    void query_tick(uint64_t t) {
        std::vector<uint64_t> expired, repull;
        for (auto& [req, q] : queries) {
            if (t - q.started > cfg.op_timeout_ms)
                expired.push_back(req);
            else if (!q.source.empty() && q.pull_sent_at &&
                     t - q.pull_sent_at > cfg.rpc_timeout_ms)
                repull.push_back(req);
        }
        // Re-pulls may complete synchronously via loopback; re-find entries.
        for (uint64_t req : repull) {
            auto it = queries.find(req);
            if (it != queries.end()) send_query_pull(req, it->second);
        }
        for (uint64_t req : expired) {
            auto it = queries.find(req);
            if (it == queries.end()) continue;
            push_event(NodeEvent::Kind::QueryData, req, false, 0, "no data arrived in time",
                       it->second.profile);
            queries.erase(it);
        }
    }

    // ------------------------------------------------------------------ deliver / execute
    void on_deliver(const DeliverPayload& p) {
        switch (p.kind) {
            case DeliverKind::Execute: {
                exec_log.push_back({p.msg.content_digest(), p.msg.action});
                auto [status, count, info] = execute_action(p);
                AckPayload a;
                a.sender = self;
                a.req_id = p.req_id;
                a.status = status;
                a.count = count;
                a.info = std::move(info);
                send_to(p.sender.endpoint, FrameType::STORE_ACK, a.encode());
                break;
            }
            case DeliverKind::Notice:
                on_notice(p);
                break;
            case DeliverKind::ClientPost:
                on_client_post(p);
                break;
        }
    }

    void on_client_post(const DeliverPayload& p) {
        GeoPoint where = p.msg.location.value_or(p.sender.geo);
        const RegionMeta* leaf = snap.leaf_for(where);
        if (leaf && leaf->path != region.path && !leaf->master_endpoint.empty()) {
            // Stale routing: pass the client's post toward the right master.
            ForwardPayload f;
            f.sender = p.sender;
            f.dest_path = leaf->path;
            f.hops_left = kForwardHops;
            f.inner = encode_frame(FrameType::STORE, p.encode(), cfg.space);
            send_to(leaf->master_endpoint, FrameType::FORWARD, f.encode());
            return;
        }
        uint64_t req = next_req++;
        start_post(req, p.msg, p.sender.endpoint, p.req_id,
                   p.aux.empty() ? p.sender.endpoint : p.aux);
    }

    struct ExecResult {
        uint8_t status = kAckOk;
        uint32_t count = 0;
        std::string info;
    };

    std::tuple<uint8_t, uint32_t, std::string> execute_action(const DeliverPayload& p) {
        ExecResult r;
        try {
            switch (p.msg.action) {
                case Action::STORE: exec_store(p, r); break;
                case Action::STATISTICS:
                    r.info = status_line();
                    r.count = 1;
                    break;
                case Action::STORE_FUNCTION: exec_store_function(p, r); break;
                case Action::START_FUNCTION: exec_start_function(p, r); break;
                case Action::STOP_FUNCTION: exec_stop_function(p, r); break;
                case Action::NOTIFY_INTEREST: exec_notify(p, r, /*data_side=*/false); break;
                case Action::NOTIFY_DATA: exec_notify(p, r, /*data_side=*/true); break;
                case Action::DELETE: exec_delete(p, r); break;
            }
        } catch (const Error& e) {
            r.status = kAckFailed;
            r.info = e.what();
        }
        return {r.status, r.count, std::move(r.info)};
    }

    void exec_store(const DeliverPayload& p, ExecResult& r) {
        data_store->put(p.msg.profile, p.msg.data, p.sender.id, now());
        r.count = 1;
        Digest256 entry_digest = stored_entry_digest(p.msg.profile, p.msg.data);
        for (const Registration& sub : subs) {
            if (!matches(p.msg.profile, sub.profile)) continue;
            if (!note_pair(sub.digest, entry_digest)) continue;
            send_notice(sub.party, p.msg.profile, Action::STORE, cfg.endpoint);
        }
    }

    void exec_delete(const DeliverPayload& p, ExecResult& r) {
        r.count = uint32_t(data_store->delete_matching(p.msg.profile));
        auto drop = [&](std::vector<Registration>& regs) {
            regs.erase(std::remove_if(regs.begin(), regs.end(),
                                      [&](const Registration& reg) {
                                          return matches(reg.profile, p.msg.profile);
                                      }),
                       regs.end());
        };
        drop(interests);
        drop(subs);
    }

    void exec_store_function(const DeliverPayload& p, ExecResult& r) {
        if (!p.msg.function)
            throw Error(Errc::ProtocolError, "store-function without a function body");
        fn_store->put(p.msg.profile, p.msg.encode(), p.sender.id, now());
        r.count = 1;
    }

    void exec_start_function(const DeliverPayload& p, ExecResult& r) {
        std::vector<StoredEntry> entries = fn_store->query(p.msg.profile);
        if (entries.empty()) return;
        if (!leader_for(p.msg)) return;  // another replica runs it
        Digest256 trigger = p.msg.content_digest();
        for (const StoredEntry& e : entries) {
            ARMessage stored;
            try {
                stored = ARMessage::decode(e.data);
            } catch (const Error&) {
                continue;
            }
            if (!stored.function) continue;
            std::string key = hex16(e.digest) + ":" + hex16(trigger);
            if (!started_keys.insert(key).second) continue;  // already ran this trigger
            const FunctionRef& fn = *stored.function;
            std::string blob_hex = sha256_hex(fn.blob);
            bool allowed = false;
            for (const std::string& a : cfg.function_allowlist) allowed = allowed || a == blob_hex;
            if (!allowed) {
                r.info = "function digest not allowed: " + blob_hex.substr(0, 16);
                push_event(NodeEvent::Kind::FunctionFailed, p.req_id, false, 0, fn.name);
                continue;
            }
            try {
                uint64_t instance = exec->start(fn, p.msg);
                running_fns.push_back({instance, fn.name, e.key_profile});
                exec_file_line("start " + fn.name + " " + hex16(trigger));
                push_event(NodeEvent::Kind::FunctionStarted, p.req_id, true, 1, fn.name);
                ++r.count;
            } catch (const std::exception& ex) {
                r.info = ex.what();
                push_event(NodeEvent::Kind::FunctionFailed, p.req_id, false, 0, ex.what());
            }
        }
    }

    void exec_stop_function(const DeliverPayload& p, ExecResult& r) {
        for (auto it = running_fns.begin(); it != running_fns.end();) {
            if (matches(it->profile, p.msg.profile)) {
                try {
                    exec->stop(it->instance);
                } catch (const std::exception&) {
                }
                exec_file_line("stop " + it->name);
                push_event(NodeEvent::Kind::FunctionStopped, p.req_id, true, 1, it->name);
                it = running_fns.erase(it);
                ++r.count;
            } else {
                ++it;
            }
        }
    }

    void exec_notify(const DeliverPayload& p, ExecResult& r, bool data_side) {
        Registration reg;
        reg.profile = p.msg.profile;
        reg.party = p.aux.empty() ? p.sender.endpoint : p.aux;
        reg.digest = p.msg.content_digest();
        std::vector<Registration>& mine = data_side ? subs : interests;
        bool known = false;
        for (const Registration& existing : mine) known = known || existing.digest == reg.digest;
        if (!known) mine.push_back(reg);
        r.count = 1;

        // Cross-match the two registries: each side learns of the other.
        const std::vector<Registration>& other = data_side ? interests : subs;
        for (const Registration& o : other) {
            const Registration& interest = data_side ? o : reg;
            const Registration& sub = data_side ? reg : o;
            if (!matches(interest.profile, sub.profile)) continue;
            if (!note_pair(interest.digest, sub.digest)) continue;
            send_notice(sub.party, interest.profile, Action::NOTIFY_INTEREST, interest.party);
            send_notice(interest.party, sub.profile, Action::NOTIFY_DATA, sub.party);
        }

        // A consumer also learns of data already stored here.
        if (data_side) {
            std::vector<StoredEntry> hits = data_store->query_wildcard(reg.profile);
            for (const StoredEntry& e : hits) {
                if (!note_pair(reg.digest, e.digest)) continue;
                send_notice(reg.party, e.key_profile, Action::STORE, cfg.endpoint);
            }
        }
    }

    bool note_pair(const Digest256& a, const Digest256& b) {
        return notified.insert(hex16(a) + ":" + hex16(b)).second;
    }

    void send_notice(const std::string& to, const Profile& about, Action action,
                     const std::string& counterpart) {
        DeliverPayload n;
        n.sender = self;
        n.req_id = next_req++;
        n.kind = DeliverKind::Notice;
        n.msg.action = action;
        n.msg.profile = about;
        n.aux = counterpart;
        send_to(to, FrameType::STORE, n.encode());
    }

    void on_notice(const DeliverPayload& p) {
        push_event(NodeEvent::Kind::Notice, p.req_id, true, 1, p.aux, p.msg.profile);
        if (p.msg.action != Action::STORE) return;  // only stored data can be pulled
        std::vector<uint64_t> ready;
        for (auto& [req, q] : queries)
            if (q.source.empty() && matches(p.msg.profile, q.profile)) ready.push_back(req);
        // A pull to this same node loops back and can complete (and erase)
        // the query synchronously, so never hold iterators across the send.
        std::string source = p.aux.empty() ? p.sender.endpoint : p.aux;
        for (uint64_t req : ready) {
            auto it = queries.find(req);
            if (it == queries.end() || !it->second.source.empty()) continue;
            it->second.source = source;
            send_query_pull(req, it->second);
        }
    }

    void send_query_pull(uint64_t req, PendingQuery& q) {
        PullPayload pull;
        pull.sender = self;
        pull.req_id = req;
        pull.kind = PullKind::Query;
        pull.stream = q.profile.text();
        pull.max_records = kLookupPullCap;
        q.pull_sent_at = now();
        send_to(q.source, FrameType::PULL, pull.encode());
    }

    // ------------------------------------------------------------------ acks
    void on_ack(const AckPayload& p) {
        auto it = posts.find(p.req_id);
        if (it != posts.end()) {
            PostOp& op = it->second;
            if (op.delegated) {
                if (!p.info.empty()) emit_stats_lines(p.info, op.reply_to, op.stats);
                push_event(NodeEvent::Kind::PostComplete, p.req_id, p.status == kAckOk, p.count,
                           p.status == kAckOk ? "" : p.info, op.msg.profile);
                posts.erase(it);
                return;
            }
            if (p.status == kAckOk) {
                ++op.acks;
                if (op.action == Action::STATISTICS && !p.info.empty())
                    emit_stats_lines(p.info, op.reply_to, op.stats);
            } else {
                ++op.fails;
                if (!p.info.empty() && op.stats.empty() && op.reply_to.empty())
                    push_event(NodeEvent::Kind::Fault, p.req_id, false, 0, p.info);
            }
            check_post_done(p.req_id);
            return;
        }
        // A push session batch ack?
        for (auto& [key, s] : pushes) {
            if (s.inflight_req != p.req_id) continue;
            s.inflight_req = 0;
            if (p.status == kAckOk) {
                uint64_t confirmed = p.count;  // receiver's expected sequence
                while (s.base_seq < confirmed && !s.buffer.empty()) {
                    s.buffer.pop_front();
                    ++s.base_seq;
                }
                push_event(NodeEvent::Kind::PushAcked, s.user_req, true, uint32_t(s.base_seq),
                           s.stream);
                if (!s.buffer.empty())
                    send_push_batch(s);
                else
                    s.retry_at = 0;
            } else {
                s.retry_at = now() + cfg.rpc_timeout_ms;  // receiver unhappy; retry later
            }
            return;
        }
    }

    void emit_stats_lines(const std::string& info, const std::string& reply_to,
                          std::vector<std::string>& sink) {
        std::istringstream in(info);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (reply_to.empty())
                push_event(NodeEvent::Kind::StatsRecord, 0, true, 1, line);
            else
                sink.push_back(line);
        }
    }

    // ------------------------------------------------------------------ push / pull
    uint64_t push_stream(const std::string& peer, const std::string& stream,
                         std::vector<Bytes> records) {
        if (phase != Phase::Running) throw Error(Errc::StreamBroken, "node is not in a ring");
        if (stream.empty()) throw Error(Errc::StreamBroken, "stream name must be non-empty");
        uint64_t req = next_req++;
        PushSession& s = pushes[{peer, stream}];
        s.peer = peer;
        s.stream = stream;
        s.user_req = req;
        for (Bytes& b : records) {
            if (b.size() > kMaxFieldBytes)
                throw Error(Errc::PayloadTooLarge, "stream record exceeds a wire field");
            s.buffer.push_back(std::move(b));
        }
        if (!s.inflight_req && !s.buffer.empty()) send_push_batch(s);
        return req;
    }

    void send_push_batch(PushSession& s) {
        size_t n = std::min(kPushBatch, s.buffer.size());
        PushPayload p;
        p.sender = self;
        p.req_id = s.inflight_req = next_req++;
        p.kind = PushKind::StreamAppend;
        p.stream = s.stream;
        p.first_seq = s.base_seq;
        p.records.assign(s.buffer.begin(), s.buffer.begin() + long(n));
        s.inflight_at = now();
        s.retry_at = 0;
        send_to(s.peer, FrameType::PUSH, p.encode());
    }

    void push_tick(uint64_t t) {
        for (auto& [key, s] : pushes) {
            if (s.buffer.empty()) continue;
            if (s.inflight_req) {
                if (t - s.inflight_at > cfg.rpc_timeout_ms) {
                    s.inflight_req = 0;  // batch lost; resend from the acked base
                    send_push_batch(s);
                }
            } else if (s.retry_at && t >= s.retry_at) {
                send_push_batch(s);
            }
        }
    }

    void on_push(const PushPayload& p) {
        if (p.kind == PushKind::PullReply) {
            on_pull_reply(p);
            return;
        }
        // StreamAppend: at-least-once with a persisted per-stream cursor, so
        // a crash between append and ack only re-appends unacked records.
        std::string cursor_key = "in:" + p.sender.endpoint + ":" + p.stream;
        uint64_t expected = collect->committed(cursor_key);
        AckPayload a;
        a.sender = self;
        a.req_id = p.req_id;
        if (p.first_seq > expected) {
            a.status = kAckFailed;
            a.count = uint32_t(std::min<uint64_t>(expected, UINT32_MAX));
            a.info = "sequence gap";
            send_to(p.sender.endpoint, FrameType::STORE_ACK, a.encode());
            return;
        }
        uint64_t skip = expected - p.first_seq;
        size_t appended = 0;
        for (size_t i = size_t(skip); i < p.records.size(); ++i) {
            TlvWriter w;
            w.put_str(kRecStream, p.stream);
            w.put(kRecPayload, p.records[i]);
            collect->append(w.take(), now());
            ++appended;
        }
        if (appended) {
            collect->sync();  // acked => durable
            expected += appended;
            collect->commit(cursor_key, expected);
        }
        a.status = kAckOk;
        a.count = uint32_t(std::min<uint64_t>(expected, UINT32_MAX));
        send_to(p.sender.endpoint, FrameType::STORE_ACK, a.encode());
        if (appended) drain_rules();
    }

    void on_pull_reply(const PushPayload& p) {
        auto it = queries.find(p.req_id);
        if (it == queries.end()) return;
        Profile prof = it->second.profile;
        queries.erase(it);
        push_event(NodeEvent::Kind::QueryData, p.req_id, true, uint32_t(p.records.size()), {},
                   std::move(prof), {}, p.records);
    }

    void on_pull(const PullPayload& p) {
        PushPayload reply;
        reply.sender = self;
        reply.req_id = p.req_id;
        reply.kind = PushKind::PullReply;
        reply.stream = p.stream;
        size_t cap = std::min<uint32_t>(p.max_records ? p.max_records : 256, kLookupPullCap);
        if (p.kind == PullKind::Query) {
            Profile prof;
            try {
                prof = Profile::parse(p.stream);
            } catch (const Error&) {
                send_to(p.sender.endpoint, FrameType::PUSH, reply.encode());
                return;
            }
            for (const StoredEntry& e : data_store->query(prof)) {
                if (reply.records.size() >= cap) break;
                TlvWriter w;
                w.put_str(kEntryProfile, e.key_profile.text());
                w.put(kEntryData, e.data);
                w.put_u64(kEntryStoredAt, e.stored_at);
                w.put_id(kEntryOrigin, e.origin);
                reply.records.push_back(w.take());
            }
        } else {
            uint64_t from = std::max(p.from_offset, collect->oldest());
            std::vector<QueueRecord> recs = collect->read(from, cap);
            uint64_t next = from;
            for (const QueueRecord& rec : recs) {
                Bytes b = rec.payload;  // already {stream, payload} fields
                TlvWriter w;
                w.put_u64(kRecTimestamp, rec.timestamp_ms);
                w.put_u64(kRecOffset, rec.offset);
                Bytes extra = w.take();
                b.insert(b.end(), extra.begin(), extra.end());
                reply.records.push_back(std::move(b));
                next = rec.offset + 1;
            }
            reply.first_seq = recs.empty() ? from : recs.front().offset;
            reply.next_offset = next;
            if (!p.consumer.empty()) collect->commit(p.consumer, from);
        }
        send_to(p.sender.endpoint, FrameType::PUSH, reply.encode());
    }

    // ------------------------------------------------------------------ rules
    void drain_rules() {
        if (rules.rules().empty()) return;
        uint64_t cursor = collect->committed(kRulesConsumer);
        uint64_t t = now();
        bool advanced = false;
        for (;;) {
            std::vector<QueueRecord> batch = collect->read(cursor, 64);
            if (batch.empty()) break;
            for (const QueueRecord& rec : batch) {
                cursor = rec.offset + 1;
                advanced = true;
                Bytes payload;
                try {
                    TlvReader rd(rec.payload);
                    while (auto f = rd.next())
                        if (f->tag == kRecPayload) payload.assign(f->value.begin(), f->value.end());
                } catch (const Error&) {
                    continue;
                }
                if (payload.empty()) continue;
                DataTuple tuple;
                try {
                    tuple = parse_data_tuple(
                        std::string_view(reinterpret_cast<const char*>(payload.data()),
                                         payload.size()));
                } catch (const Error&) {
                    continue;  // not tuple-shaped; rules do not apply
                }
                current_rule_payload = payload;
                rules.evaluate_cycle(std::move(tuple), int64_t(t - rec.timestamp_ms));
            }
        }
        if (advanced) collect->commit(kRulesConsumer, cursor);
    }

    // ------------------------------------------------------------------ leadership
    bool leader_for(const ARMessage& msg) {
        std::vector<NodeId> ids = region.ids();
        if (ids.empty()) return true;
        try {
            Target t = profile_to_target(msg.profile, cfg.space);
            if (t.is_point) {
                uint64_t index = hilbert_encode(t.point, cfg.space.bits);
                NodeId key = scaled_key(index, cfg.space.index_bits());
                std::vector<NodeId> lead = n_closest(ids, key, 1);
                return !lead.empty() && lead[0] == self.id;
            }
            std::vector<NodeId> owners =
                responsible_union(ids, covering(t.box), cfg.space.index_bits(), 1);
            return std::find(owners.begin(), owners.end(), self.id) != owners.end();
        } catch (const Error&) {
            return false;
        }
    }

    // ------------------------------------------------------------------ misc
    void exec_file_line(const std::string& line) {
        std::ofstream out(std::filesystem::path(cfg.data_dir) / "executor.log",
                          std::ios::app | std::ios::binary);
        out << now() << ' ' << line << '\n';
    }

    std::string status_line() {
        std::ostringstream s;
        s << "ep=" << cfg.endpoint << " id=" << self.id.short_hex()
          << " path=" << (region.path.empty() ? "/" : region.path) << " ring=" << region.ring.size()
          << " master=" << region.master.short_hex() << " snap=v" << snap.version
          << " entries=" << data_store->stats().live_entries
          << " functions=" << fn_store->stats().live_entries << " queue=" << collect->head()
          << " up_ms=" << (started_at ? now() - started_at : 0);
        return s.str();
    }
};

// ---------------------------------------------------------------------- Node

Node::Node(NodeConfig cfg, Transport& transport, Clock& clock, TimerHost& timers,
           FunctionExecutor* executor)
    : impl_(std::make_unique<Impl>(std::move(cfg), transport, clock, timers, executor)) {}

Node::~Node() {
    if (impl_ && impl_->phase != Impl::Phase::Idle) impl_->shutdown();
}

Node::Node(Node&&) noexcept = default;
Node& Node::operator=(Node&&) noexcept = default;

void Node::start() { impl_->start(); }
void Node::shutdown() { impl_->shutdown(); }

void Node::on_frame(const std::string& from_endpoint, BytesView frame) {
    impl_->handle_frame(from_endpoint, frame);
}

void Node::on_timer(uint64_t token) { impl_->on_timer(token); }

uint64_t Node::post(ARMessage msg) { return impl_->post_message(std::move(msg)); }

uint64_t Node::lookup(const NodeId& target, uint8_t r) {
    if (impl_->phase != Impl::Phase::Running)
        throw Error(Errc::LookupFailed, "node is not in a ring");
    return impl_->start_lookup(target, r, true, {});
}

uint64_t Node::push_stream(const std::string& peer_endpoint, const std::string& stream,
                           std::vector<Bytes> records) {
    return impl_->push_stream(peer_endpoint, stream, std::move(records));
}

std::vector<PulledRecord> Node::pull_local(const std::string& consumer, size_t max_records) {
    std::vector<PulledRecord> out;
    uint64_t from = std::max(impl_->collect->committed(consumer), impl_->collect->oldest());
    for (const QueueRecord& rec : impl_->collect->read(from, max_records)) {
        PulledRecord r;
        r.offset = rec.offset;
        r.timestamp_ms = rec.timestamp_ms;
        TlvReader rd(rec.payload);
        while (auto f = rd.next()) {
            if (f->tag == kRecStream) r.stream = TlvReader::as_str(f->value);
            if (f->tag == kRecPayload) r.payload.assign(f->value.begin(), f->value.end());
        }
        out.push_back(std::move(r));
    }
    return out;
}

void Node::commit_local(const std::string& consumer, uint64_t offset) {
    impl_->collect->commit(consumer, offset);
}

std::vector<NodeEvent> Node::take_events() { return std::exchange(impl_->events, {}); }

const NodeId& Node::id() const { return impl_->self.id; }
const std::string& Node::endpoint() const { return impl_->cfg.endpoint; }
bool Node::running() const { return impl_->phase == Impl::Phase::Running; }
bool Node::is_master() const { return impl_->master_here(); }
const Region& Node::region() const { return impl_->region; }
const QuadTreeSnapshot& Node::snapshot() const { return impl_->snap; }
const RoutingTable& Node::routing_table() const { return impl_->table; }
Store& Node::store() { return *impl_->data_store; }
Store& Node::function_store() { return *impl_->fn_store; }
Queue& Node::collection_queue() { return *impl_->collect; }
const std::vector<ExecutionRecord>& Node::execution_log() const { return impl_->exec_log; }
std::string Node::status_line() { return impl_->status_line(); }
const NodeConfig& Node::config() const { return impl_->cfg; }

}  // namespace rpmesh
