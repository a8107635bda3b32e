#include "rpmesh/simnet.hpp"

#include <algorithm>
#include <sstream>

#include "rpmesh/errors.hpp"

namespace rpmesh {

namespace {

const char* event_kind_name(NodeEvent::Kind k) {
    switch (k) {
        case NodeEvent::Kind::JoinedRing: return "joined-ring";
        case NodeEvent::Kind::BecameMaster: return "became-master";
        case NodeEvent::Kind::PostComplete: return "post-complete";
        case NodeEvent::Kind::StatsRecord: return "stats-record";
        case NodeEvent::Kind::Notice: return "notice";
        case NodeEvent::Kind::QueryData: return "query-data";
        case NodeEvent::Kind::LookupDone: return "lookup-done";
        case NodeEvent::Kind::PushAcked: return "push-acked";
        case NodeEvent::Kind::PullData: return "pull-data";
        case NodeEvent::Kind::FunctionStarted: return "function-started";
        case NodeEvent::Kind::FunctionStopped: return "function-stopped";
        case NodeEvent::Kind::FunctionFailed: return "function-failed";
        case NodeEvent::Kind::RuleFired: return "rule-fired";
        case NodeEvent::Kind::Fault: return "fault";
    }
    return "?";
}

uint8_t frame_type_byte(BytesView frame) {
    // magic(4) version(1) digest(8) type(1): type sits at offset 13.
    return frame.size() > 13 ? frame[13] : 0;
}

std::string frame_field(const TraceEvent& e) {
    if (e.kind == TraceKind::State || e.kind == TraceKind::Timer) return e.note;
    if (e.frame_type == 0) return "";
    return frame_type_name(static_cast<FrameType>(e.frame_type));
}

}  // namespace

const char* trace_kind_name(TraceKind k) {
    switch (k) {
        case TraceKind::Send: return "send";
        case TraceKind::Deliver: return "deliver";
        case TraceKind::Drop: return "drop";
        case TraceKind::Timer: return "timer";
        case TraceKind::State: return "state";
    }
    return "?";
}

std::string trace_csv(const SimTrace& trace) {
    std::string out = "time,event,src,dst,frame,hops\n";
    for (const TraceEvent& e : trace) {
        out += std::to_string(e.time);
        out += ',';
        out += trace_kind_name(e.kind);
        out += ',';
        out += e.src;
        out += ',';
        out += e.dst;
        out += ',';
        out += frame_field(e);
        out += ',';
        out += std::to_string(e.hops);
        out += '\n';
    }
    return out;
}

TraceStats measure(const SimTrace& trace) {
    TraceStats s;
    std::map<uint64_t, uint64_t> send_time;
    uint64_t latency_sum = 0, matched = 0;
    for (const TraceEvent& e : trace) {
        switch (e.kind) {
            case TraceKind::Send:
                ++s.sends;
                send_time[e.msg_id] = e.time;
                break;
            case TraceKind::Deliver: {
                ++s.delivers;
                s.hop_total += e.hops;
                if (e.frame_type != 0)
                    ++s.delivered_by_type[frame_type_name(static_cast<FrameType>(e.frame_type))];
                auto it = send_time.find(e.msg_id);
                if (it != send_time.end()) {
                    latency_sum += e.time - it->second;
                    ++matched;
                }
                break;
            }
            case TraceKind::Drop: ++s.drops; break;
            case TraceKind::Timer: ++s.timers; break;
            case TraceKind::State: break;
        }
    }
    if (matched) s.mean_latency_ms = double(latency_sum) / double(matched);
    return s;
}

// Adapter feeding one node's seams back into the shared scheduler.
struct SimPort final : Transport, Clock, TimerHost {
    SimNet* net = nullptr;
    std::string name;

    void send(const std::string& to, BytesView frame) override { net->submit(name, to, frame); }
    uint64_t now_ms() override { return net->now(); }
    void set_timer(uint64_t delay_ms, uint64_t token) override {
        net->schedule_timer(name, delay_ms, token);
    }
};

struct SimNet::Harness {
    std::string name;
    NodeConfig cfg;  // as built, for restart()
    SimPort port;
    FunctionExecutor* executor = nullptr;
    std::unique_ptr<Node> node;
    bool alive = false;
    uint64_t generation = 0;  // invalidates timers from previous lives
    std::vector<NodeEvent> events;
};

SimNet::SimNet(SimOptions opts, std::string workdir)
    : opts_(opts), workdir_(std::move(workdir)), rng_(opts.seed) {
    if (opts_.latency_max_ms < opts_.latency_min_ms)
        throw Error(Errc::ScenarioError, "latency_max_ms < latency_min_ms");
}

SimNet::~SimNet() = default;

SimNet::Harness* SimNet::find(const std::string& name) {
    auto it = nodes_.find(name);
    return it == nodes_.end() ? nullptr : it->second.get();
}

Node& SimNet::add_node(const std::string& name, NodeConfig cfg, FunctionExecutor* executor) {
    if (nodes_.count(name)) throw Error(Errc::ScenarioError, "node already exists: " + name);
    auto h = std::make_unique<Harness>();
    h->name = name;
    cfg.endpoint = name;
    if (cfg.data_dir.empty()) cfg.data_dir = workdir_ + "/" + name;
    cfg.rng_seed = opts_.seed * 1000003u + ++node_ordinal_;
    h->cfg = cfg;
    h->executor = executor;
    h->port.net = this;
    h->port.name = name;
    h->node = std::make_unique<Node>(h->cfg, h->port, h->port, h->port, executor);
    Node& ref = *h->node;
    nodes_.emplace(name, std::move(h));
    return ref;
}

void SimNet::start(const std::string& name) {
    Harness* h = find(name);
    if (!h || !h->node) throw Error(Errc::ScenarioError, "start of unknown/dead node: " + name);
    h->alive = true;
    h->node->start();
    drain(*h);
}

void SimNet::kill(const std::string& name) {
    Harness* h = find(name);
    if (!h || !h->alive) throw Error(Errc::ScenarioError, "kill of unknown/dead node: " + name);
    h->alive = false;  // anything the teardown path might emit goes nowhere
    ++h->generation;
    drain(*h);
    h->node.reset();
}

Node& SimNet::restart(const std::string& name, std::vector<std::string> bootstrap) {
    Harness* h = find(name);
    if (!h) throw Error(Errc::ScenarioError, "restart of unknown node: " + name);
    if (h->alive) throw Error(Errc::ScenarioError, "restart of live node: " + name);
    if (!bootstrap.empty()) h->cfg.bootstrap = std::move(bootstrap);
    h->node = std::make_unique<Node>(h->cfg, h->port, h->port, h->port, h->executor);
    h->alive = true;
    h->node->start();
    drain(*h);
    return *h->node;
}

bool SimNet::alive(const std::string& name) const {
    auto it = nodes_.find(name);
    return it != nodes_.end() && it->second->alive;
}

Node& SimNet::node(const std::string& name) {
    Harness* h = find(name);
    if (!h || !h->node) throw Error(Errc::ScenarioError, "no live node: " + name);
    return *h->node;
}

std::vector<std::string> SimNet::names() const {
    std::vector<std::string> out;
    for (const auto& [name, h] : nodes_) out.push_back(name);
    return out;
}

std::vector<std::string> SimNet::live_names() const {
    std::vector<std::string> out;
    for (const auto& [name, h] : nodes_)
        if (h->alive) out.push_back(name);
    return out;
}

void SimNet::submit(const std::string& from, const std::string& to, BytesView frame) {
    Harness* sender = find(from);
    if (sender && !sender->alive) return;  // teardown noise from a killed node
    ++next_msg_;
    uint8_t type = frame_type_byte(frame);
    trace_.push_back({now_, TraceKind::Send, from, to, type, 0, next_msg_, ""});
    if (blocked_.count({from, to})) {
        trace_.push_back({now_, TraceKind::Drop, from, to, type, 0, next_msg_, "partition"});
        return;
    }
    if (opts_.loss > 0.0 &&
        std::bernoulli_distribution(std::min(opts_.loss, 1.0))(rng_)) {
        trace_.push_back({now_, TraceKind::Drop, from, to, type, 0, next_msg_, "loss"});
        return;
    }
    uint64_t lat = opts_.latency_min_ms;
    if (opts_.latency_max_ms > opts_.latency_min_ms)
        lat = std::uniform_int_distribution<uint64_t>(opts_.latency_min_ms,
                                                      opts_.latency_max_ms)(rng_);
    Ev ev;
    ev.time = now_ + lat;
    ev.seq = ++seq_;
    ev.from = from;
    ev.to = to;
    ev.frame.assign(frame.begin(), frame.end());
    ev.msg_id = next_msg_;
    queue_.push(std::move(ev));
}

void SimNet::schedule_timer(const std::string& name, uint64_t delay, uint64_t token) {
    Harness* h = find(name);
    if (!h) return;
    Ev ev;
    ev.time = now_ + delay;
    ev.seq = ++seq_;
    ev.timer = true;
    ev.to = name;
    ev.token = token;
    ev.generation = h->generation;
    queue_.push(std::move(ev));
}

void SimNet::drain(Harness& h) {
    if (!h.node) return;
    for (NodeEvent& ev : h.node->take_events()) {
        trace_.push_back(
            {now_, TraceKind::State, h.name, "", 0, 0, ev.req_id, event_kind_name(ev.kind)});
        h.events.push_back(std::move(ev));
    }
}

void SimNet::dispatch_one() {
    Ev ev = queue_.top();
    queue_.pop();
    now_ = std::max(now_, ev.time);
    Harness* h = find(ev.to);
    if (ev.timer) {
        if (!h || !h->alive || ev.generation != h->generation) return;
        trace_.push_back({now_, TraceKind::Timer, "", ev.to, 0, 0, ev.token, "timer"});
        h->node->on_timer(ev.token);
        drain(*h);
        return;
    }
    if (!h || !h->alive) {
        trace_.push_back(
            {now_, TraceKind::Drop, ev.from, ev.to, frame_type_byte(ev.frame), 0, ev.msg_id, "down"});
        return;
    }
    trace_.push_back({now_, TraceKind::Deliver, ev.from, ev.to, frame_type_byte(ev.frame), 1,
                      ev.msg_id, ""});
    h->node->on_frame(ev.from, ev.frame);
    drain(*h);
}

void SimNet::run_until(uint64_t t_ms) {
    while (!queue_.empty() && queue_.top().time <= t_ms) dispatch_one();
    now_ = std::max(now_, t_ms);
}

bool SimNet::run_until_quiet(uint64_t quiet_ms, uint64_t deadline_ms) {
    uint64_t last_activity = now_;
    while (!queue_.empty() && queue_.top().time <= deadline_ms) {
        if (queue_.top().time > last_activity + quiet_ms) {
            now_ = std::max(now_, last_activity + quiet_ms);
            return true;
        }
        size_t mark = trace_.size();
        dispatch_one();
        for (size_t i = mark; i < trace_.size(); ++i) {
            if (trace_[i].kind == TraceKind::Send || trace_[i].kind == TraceKind::Deliver) {
                last_activity = now_;
                break;
            }
        }
    }
    now_ = std::max(now_, std::min(deadline_ms, last_activity + quiet_ms));
    return queue_.empty() || queue_.top().time > last_activity + quiet_ms;
}

uint64_t SimNet::post_from(const std::string& name, ARMessage msg) {
    Harness* h = find(name);
    if (!h || !h->alive) throw Error(Errc::ScenarioError, "post from unknown/dead node: " + name);
    uint64_t req = h->node->post(std::move(msg));
    drain(*h);
    return req;
}

uint64_t SimNet::push_from(const std::string& name, const std::string& peer,
                           const std::string& stream, std::vector<Bytes> records) {
    Harness* h = find(name);
    if (!h || !h->alive) throw Error(Errc::ScenarioError, "push from unknown/dead node: " + name);
    uint64_t req = h->node->push_stream(peer, stream, std::move(records));
    drain(*h);
    return req;
}

std::vector<NodeEvent> SimNet::take_events(const std::string& name) {
    Harness* h = find(name);
    if (!h) throw Error(Errc::ScenarioError, "events of unknown node: " + name);
    if (h->alive) drain(*h);
    return std::exchange(h->events, {});
}

void SimNet::partition(const std::vector<std::vector<std::string>>& groups) {
    blocked_.clear();
    std::map<std::string, size_t> group_of;
    for (size_t g = 0; g < groups.size(); ++g)
        for (const std::string& n : groups[g]) group_of[n] = g;
    for (const auto& [a, ga] : group_of)
        for (const auto& [b, gb] : group_of)
            if (ga != gb) blocked_.insert({a, b});
}

void SimNet::heal() { blocked_.clear(); }

// ---- scenario scripting ----

namespace {

std::string strip(std::string s) {
    size_t hash = s.find('#');
    if (hash != std::string::npos) s.erase(hash);
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_line(size_t line_no, const std::string& why) {
    throw Error(Errc::ScenarioError, "line " + std::to_string(line_no) + ": " + why);
}

std::vector<std::vector<std::string>> parse_groups(const std::string& token) {
    std::vector<std::vector<std::string>> groups;
    std::istringstream gs(token);
    std::string group;
    while (std::getline(gs, group, '|')) {
        std::vector<std::string> names;
        std::istringstream ns(group);
        std::string name;
        while (std::getline(ns, name, ','))
            if (!name.empty()) names.push_back(name);
        groups.push_back(std::move(names));
    }
    return groups;
}

ScenarioCheckpoint take_checkpoint(SimNet& net) {
    ScenarioCheckpoint cp;
    cp.time = net.now();
    for (const std::string& name : net.names()) {
        ScenarioCheckpoint::NodeState st;
        st.name = name;
        st.alive = net.alive(name);
        if (st.alive) {
            Node& n = net.node(name);
            st.running = n.running();
            st.master = n.is_master();
            st.path = n.region().path;
            st.master_id = n.region().master.short_hex();
            st.ring_size = uint32_t(n.region().ring.size());
            st.geo = n.config().geo;
        }
        cp.nodes.push_back(std::move(st));
    }
    return cp;
}

}  // namespace

ScenarioResult run_scenario(SimNet& net, const NodeConfig& base, std::string_view script) {
    ScenarioResult out;
    std::istringstream in{std::string(script)};
    std::string raw;
    size_t line_no = 0;
    uint64_t last_t = net.now();
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = strip(raw);
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string kw, cmd;
        uint64_t t = 0;
        if (!(ls >> kw >> t >> cmd) || kw != "at") bad_line(line_no, "expected 'at <t> <cmd>'");
        if (t < last_t) bad_line(line_no, "time goes backwards");
        net.run_until(t);
        last_t = t;

        if (cmd == "join") {
            std::string name;
            double lat = 0, lon = 0;
            if (!(ls >> name >> lat >> lon)) bad_line(line_no, "join <node> <lat> <lon>");
            NodeConfig cfg = base;
            cfg.geo = GeoPoint{lat, lon};
            auto live = net.live_names();
            cfg.bootstrap = live.empty() ? std::vector<std::string>{}
                                         : std::vector<std::string>{live.front()};
            net.add_node(name, cfg);
            net.start(name);
        } else if (cmd == "post") {
            std::string name, action, profile;
            if (!(ls >> name >> action >> profile))
                bad_line(line_no, "post <node> <action> <profile> [data]");
            auto act = action_from_name(action);
            if (!act) bad_line(line_no, "unknown action: " + action);
            ARMessage msg;
            msg.action = *act;
            msg.profile = Profile::parse(profile);
            std::string rest;
            std::getline(ls, rest);
            rest = strip(rest);
            msg.data.assign(rest.begin(), rest.end());
            out.post_reqs.push_back(net.post_from(name, std::move(msg)));
        } else if (cmd == "kill") {
            std::string name;
            if (!(ls >> name)) bad_line(line_no, "kill <node>");
            net.kill(name);
        } else if (cmd == "heal") {
            net.heal();
        } else if (cmd == "partition") {
            std::string token;
            if (!(ls >> token)) bad_line(line_no, "partition <a,b|c,d>");
            net.partition(parse_groups(token));
        } else if (cmd == "checkpoint") {
            out.checkpoints.push_back(take_checkpoint(net));
        } else {
            bad_line(line_no, "unknown command: " + cmd);
        }
    }
    return out;
}

}  // namespace rpmesh
