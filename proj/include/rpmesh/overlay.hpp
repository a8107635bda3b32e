#pragma once

// Building blocks of the geo-partitioned overlay: ring membership, the
// quadtree of regions, the per-node k-bucket routing table, and the mapping
// from curve indices to the identifier space that decides which ring members
// are responsible for a key.
//
// Everything here is pure state + functions; the protocol driving it lives
// in the node event loop.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rpmesh/clusters.hpp"
#include "rpmesh/digest.hpp"
#include "rpmesh/geo.hpp"

namespace rpmesh {

struct Member {
    NodeId id{};
    std::string endpoint;
    GeoPoint geo{};

    bool operator==(const Member&) const = default;
};

// One ring of the quadtree: the leaf region this node lives in.
struct Region {
    std::string path;        // base-4 quadrant digits from the root ("" = root)
    LatLonBox box{};         // bounds of this leaf
    std::vector<Member> ring;  // full membership, sorted by id ascending
    NodeId master{};

    bool operator==(const Region&) const = default;

    const Member* find(const NodeId& id) const;
    bool add(const Member& m);                 // keeps the ring sorted; false if present
    bool remove(const NodeId& id);
    std::vector<NodeId> ids() const;
};

// Region metadata replicated to masters: bounds + master, not membership.
struct RegionMeta {
    std::string path;
    LatLonBox box{};
    bool leaf = true;
    NodeId master{};
    std::string master_endpoint;
    uint32_t ring_size = 0;

    bool operator==(const RegionMeta&) const = default;
};

// The quadtree, as replicated state. Leaves tile the root box; the leaf for
// a point is found by walking quadrant digits from the root.
struct QuadTreeSnapshot {
    uint64_t version = 0;
    std::map<std::string, RegionMeta> regions;  // keyed by path

    bool operator==(const QuadTreeSnapshot&) const = default;

    static QuadTreeSnapshot single_root(const Member& master, uint32_t ring_size);

    const RegionMeta* find(const std::string& path) const;
    // Leaf whose box contains the point (edge ties go to the smaller digit).
    const RegionMeta* leaf_for(const GeoPoint& geo) const;
    std::vector<const RegionMeta*> leaves() const;

    // Replaces the leaf at `path` with an internal node and four child
    // leaves, bumping the version. Child masters/sizes supplied by caller.
    void apply_split(const std::string& path, const std::vector<RegionMeta>& children);
};

// Fixed-capacity XOR-distance buckets over a 160-bit id space. Bucket i
// holds contacts whose distance to the owner has its highest set bit at
// bit i (counting bit 0 as the most significant), i.e. contacts sharing an
// i-bit prefix with the owner. Near buckets are small and therefore never
// overflow, which is what iterative lookup correctness rests on.
class RoutingTable {
  public:
    RoutingTable() = default;
    RoutingTable(NodeId self, size_t bucket_capacity);

    // True if inserted or refreshed; false when the bucket is full.
    bool insert(const Member& m);
    void remove(const NodeId& id);
    void clear();

    // Up to r known contacts closest to target by XOR distance.
    std::vector<Member> closest(const NodeId& target, size_t r) const;

    const Member* find(const NodeId& id) const;
    size_t size() const;
    size_t bucket_count_nonempty() const;

  private:
    NodeId self_{};
    size_t capacity_ = 16;
    std::map<int, std::vector<Member>> buckets_;  // prefix length -> contacts
};

// ---- Responsibility: curve index -> identifier space ----

// Index bits left-aligned in the 160-bit id space (the low 160 - index_bits
// bits are zero). index_bits = dims * bits <= 64.
NodeId scaled_key(uint64_t index, uint32_t index_bits);

// The min(n, members) ids closest to `key` by XOR distance, ascending by
// distance. Members need not be sorted.
std::vector<NodeId> n_closest(const std::vector<NodeId>& members, const NodeId& key, size_t n);

// Union over every index in [seg.first, seg.last] of the n_rep ids closest
// to scaled_key(index). Computed by descending the member-id trie jointly
// with the index interval, so it is exact without enumerating cells.
std::vector<NodeId> responsible_union(const std::vector<NodeId>& members, Segment seg,
                                      uint32_t index_bits, size_t n_rep);

// Same union across a whole covering.
std::vector<NodeId> responsible_union(const std::vector<NodeId>& members,
                                      const std::vector<Segment>& segments, uint32_t index_bits,
                                      size_t n_rep);

// ---- Ring election (Hirschberg–Sinclair) support ----

// Neighbours of `self` in the logical ring ordered by id ascending.
// Requires ids sorted ascending and containing self.
struct RingNeighbours {
    NodeId left{};   // predecessor (wraps)
    NodeId right{};  // successor (wraps)
};
RingNeighbours ring_neighbours(const std::vector<NodeId>& sorted_ids, const NodeId& self);

}  // namespace rpmesh
