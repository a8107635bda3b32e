#include "rpmesh/overlay.hpp"

#include <algorithm>
#include <cassert>

#include "rpmesh/errors.hpp"

namespace rpmesh {

// ---- Region ----

const Member* Region::find(const NodeId& id) const {
    auto it = std::lower_bound(ring.begin(), ring.end(), id,
                               [](const Member& m, const NodeId& v) { return m.id < v; });
    return (it != ring.end() && it->id == id) ? &*it : nullptr;
}

bool Region::add(const Member& m) {
    auto it = std::lower_bound(ring.begin(), ring.end(), m.id,
                               [](const Member& e, const NodeId& v) { return e.id < v; });
    if (it != ring.end() && it->id == m.id) {
        *it = m;  // refresh endpoint/geo
        return false;
    }
    ring.insert(it, m);
    return true;
}

bool Region::remove(const NodeId& id) {
    auto it = std::lower_bound(ring.begin(), ring.end(), id,
                               [](const Member& e, const NodeId& v) { return e.id < v; });
    if (it == ring.end() || it->id != id) return false;
    ring.erase(it);
    return true;
}

std::vector<NodeId> Region::ids() const {
    std::vector<NodeId> out;
    out.reserve(ring.size());
    for (const Member& m : ring) out.push_back(m.id);
    return out;
}

// ---- QuadTreeSnapshot ----

QuadTreeSnapshot QuadTreeSnapshot::single_root(const Member& master, uint32_t ring_size) {
    QuadTreeSnapshot s;
    s.version = 1;
    RegionMeta root;
    root.path = "";
    root.box = LatLonBox{};
    root.leaf = true;
    root.master = master.id;
    root.master_endpoint = master.endpoint;
    root.ring_size = ring_size;
    s.regions.emplace("", std::move(root));
    return s;
}

const RegionMeta* QuadTreeSnapshot::find(const std::string& path) const {
    auto it = regions.find(path);
    return it == regions.end() ? nullptr : &it->second;
}

const RegionMeta* QuadTreeSnapshot::leaf_for(const GeoPoint& geo) const {
    const RegionMeta* cur = find("");
    while (cur && !cur->leaf) {
        uint32_t digit = cur->box.quadrant_of(geo);
        const RegionMeta* child = find(cur->path + char('0' + digit));
        if (!child) return nullptr;  // inconsistent snapshot
        cur = child;
    }
    return cur;
}

std::vector<const RegionMeta*> QuadTreeSnapshot::leaves() const {
    std::vector<const RegionMeta*> out;
    for (const auto& [path, meta] : regions)
        if (meta.leaf) out.push_back(&meta);
    return out;
}

void QuadTreeSnapshot::apply_split(const std::string& path,
                                   const std::vector<RegionMeta>& children) {
    auto it = regions.find(path);
    if (it == regions.end() || !it->second.leaf)
        throw Error(Errc::ProtocolError, "split of unknown or internal region '" + path + "'");
    it->second.leaf = false;
    it->second.ring_size = 0;
    for (const RegionMeta& c : children) regions[c.path] = c;
    ++version;
}

// ---- RoutingTable ----

RoutingTable::RoutingTable(NodeId self, size_t bucket_capacity)
    : self_(self), capacity_(bucket_capacity ? bucket_capacity : 1) {}

namespace {

// Shared-prefix length between two ids = index (from the MSB) of the highest
// set bit of their XOR distance; 160 when equal.
int prefix_length(const NodeId& a, const NodeId& b) {
    for (int byte = 0; byte < 20; ++byte) {
        uint8_t x = uint8_t(a.bytes[byte] ^ b.bytes[byte]);
        if (x) {
            int lead = 0;
            while (!(x & 0x80)) {
                x = uint8_t(x << 1);
                ++lead;
            }
            return byte * 8 + lead;
        }
    }
    return 160;
}

}  // namespace

bool RoutingTable::insert(const Member& m) {
    if (m.id == self_) return false;
    int p = prefix_length(m.id, self_);
    auto& bucket = buckets_[p];
    for (Member& e : bucket)
        if (e.id == m.id) {
            e = m;
            return true;
        }
    if (bucket.size() >= capacity_) return false;
    bucket.push_back(m);
    return true;
}

void RoutingTable::remove(const NodeId& id) {
    auto it = buckets_.find(prefix_length(id, self_));
    if (it == buckets_.end()) return;
    auto& bucket = it->second;
    std::erase_if(bucket, [&](const Member& m) { return m.id == id; });
    if (bucket.empty()) buckets_.erase(it);
}

void RoutingTable::clear() { buckets_.clear(); }

std::vector<Member> RoutingTable::closest(const NodeId& target, size_t r) const {
    std::vector<Member> all;
    for (const auto& [p, bucket] : buckets_) all.insert(all.end(), bucket.begin(), bucket.end());
    std::sort(all.begin(), all.end(), [&](const Member& a, const Member& b) {
        return xor_distance(a.id, target) < xor_distance(b.id, target);
    });
    if (all.size() > r) all.resize(r);
    return all;
}

const Member* RoutingTable::find(const NodeId& id) const {
    auto it = buckets_.find(prefix_length(id, self_));
    if (it == buckets_.end()) return nullptr;
    for (const Member& m : it->second)
        if (m.id == id) return &m;
    return nullptr;
}

size_t RoutingTable::size() const {
    size_t n = 0;
    for (const auto& [p, bucket] : buckets_) n += bucket.size();
    return n;
}

size_t RoutingTable::bucket_count_nonempty() const { return buckets_.size(); }

// ---- Responsibility ----

NodeId scaled_key(uint64_t index, uint32_t index_bits) {
    if (index_bits == 0 || index_bits > 64)
        throw Error(Errc::InvalidIndex, "index bits out of range");
    NodeId k{};
    uint64_t top = index_bits >= 64 ? index : (index << (64 - index_bits));
    for (int i = 0; i < 8; ++i) k.bytes[i] = uint8_t(top >> (56 - 8 * i));
    return k;
}

std::vector<NodeId> n_closest(const std::vector<NodeId>& members, const NodeId& key, size_t n) {
    std::vector<NodeId> out = members;
    std::sort(out.begin(), out.end(), [&](const NodeId& a, const NodeId& b) {
        return xor_distance(a, key) < xor_distance(b, key);
    });
    if (out.size() > n) out.resize(n);
    return out;
}

namespace {

// Bit q of an id, counting q = 0 as the most significant bit.
inline int id_bit(const NodeId& id, uint32_t q) {
    return (id.bytes[q >> 3] >> (7 - (q & 7))) & 1;
}

// Recursive union of per-key replica sets.
//
// Invariant: ids[first, last) all share their top `q` bits, and every key in
// the interval shares those same top q bits (keys are scaled indices, so key
// bit q corresponds to index bit q while q < index_bits and is 0 beyond).
// At each level the id group and the key interval split on bit q; ids on the
// key's side of the split are strictly closer (bit q dominates everything
// below), so either the whole answer lives there, or all of that side is in
// the answer and the remainder spills to the other side.
struct UnionScan {
    const std::vector<NodeId>& ids;  // sorted ascending
    uint32_t index_bits;
    std::vector<char>& taken;  // per-id membership flags (dedup across keys)

    void take_first(size_t first, size_t count) {
        for (size_t i = first; i < first + count; ++i) taken[i] = 1;
    }

    // lo/hi: inclusive index interval; span_lo/span_hi: the full index range
    // of the current subtree (so the split point is derivable at depth q).
    void recurse(size_t first, size_t last, uint32_t q, uint64_t lo, uint64_t hi,
                 uint64_t span_lo, uint64_t span_hi, size_t need) {
        if (need == 0 || first == last) return;
        size_t count = last - first;
        if (count <= need) {
            take_first(first, count);
            return;
        }
        if (q >= index_bits) {
            // Every remaining key bit is zero, so XOR order = ascending id
            // order within the shared prefix.
            take_first(first, need);
            return;
        }
        // Partition ids by bit q (sorted input keeps each side contiguous).
        size_t mid = first;
        while (mid < last && id_bit(ids[mid], q) == 0) ++mid;
        uint64_t span_mid = span_lo + (span_hi - span_lo) / 2;  // last index with bit 0
        // Key-side 0: indices in [span_lo, span_mid].
        if (lo <= span_mid) {
            size_t near = mid - first;
            if (near >= need) {
                recurse(first, mid, q + 1, lo, std::min(hi, span_mid), span_lo, span_mid, need);
            } else {
                take_first(first, near);
                recurse(mid, last, q + 1, lo, std::min(hi, span_mid), span_lo, span_mid,
                        need - near);
            }
        }
        // Key-side 1: indices in [span_mid + 1, span_hi].
        if (hi > span_mid) {
            size_t near = last - mid;
            if (near >= need) {
                recurse(mid, last, q + 1, std::max(lo, span_mid + 1), hi, span_mid + 1, span_hi,
                        need);
            } else {
                take_first(mid, near);
                recurse(first, mid, q + 1, std::max(lo, span_mid + 1), hi, span_mid + 1, span_hi,
                        need - near);
            }
        }
    }
};

}  // namespace

std::vector<NodeId> responsible_union(const std::vector<NodeId>& members, Segment seg,
                                      uint32_t index_bits, size_t n_rep) {
    return responsible_union(members, std::vector<Segment>{seg}, index_bits, n_rep);
}

std::vector<NodeId> responsible_union(const std::vector<NodeId>& members,
                                      const std::vector<Segment>& segments, uint32_t index_bits,
                                      size_t n_rep) {
    if (index_bits == 0 || index_bits > 64)
        throw Error(Errc::InvalidIndex, "index bits out of range");
    std::vector<NodeId> sorted = members;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

    std::vector<char> taken(sorted.size(), 0);
    uint64_t span_hi = index_bits >= 64 ? ~uint64_t(0) : ((uint64_t(1) << index_bits) - 1);
    UnionScan scan{sorted, index_bits, taken};
    for (const Segment& seg : segments) {
        if (seg.first > seg.last || seg.last > span_hi)
            throw Error(Errc::InvalidIndex, "segment outside index space");
        scan.recurse(0, sorted.size(), 0, seg.first, seg.last, 0, span_hi, n_rep);
    }
    std::vector<NodeId> out;
    for (size_t i = 0; i < sorted.size(); ++i)
        if (taken[i]) out.push_back(sorted[i]);
    return out;
}

// ---- Ring neighbours ----

RingNeighbours ring_neighbours(const std::vector<NodeId>& sorted_ids, const NodeId& self) {
    if (sorted_ids.empty()) throw Error(Errc::ProtocolError, "ring is empty");
    auto it = std::lower_bound(sorted_ids.begin(), sorted_ids.end(), self);
    if (it == sorted_ids.end() || *it != self)
        throw Error(Errc::ProtocolError, "node not in its own ring");
    size_t i = size_t(it - sorted_ids.begin());
    size_t n = sorted_ids.size();
    RingNeighbours out;
    out.left = sorted_ids[(i + n - 1) % n];
    out.right = sorted_ids[(i + 1) % n];
    return out;
}

}  // namespace rpmesh
