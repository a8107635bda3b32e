// Ring membership, quadtree, routing table, and the responsibility mapping,
// checked against the brute-force reference in oracles/overlay_oracle.hpp.

#include <algorithm>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles/overlay_oracle.hpp"
#include "rpmesh/errors.hpp"
#include "rpmesh/overlay.hpp"

using namespace rpmesh;
using namespace rpmesh::testing;

namespace {

NodeId rand_id(std::mt19937_64& rng) {
    NodeId id;
    for (auto& b : id.bytes) b = uint8_t(rng());
    return id;
}

std::vector<NodeId> rand_ids(std::mt19937_64& rng, size_t n) {
    std::set<NodeId> s;
    while (s.size() < n) s.insert(rand_id(rng));
    return {s.begin(), s.end()};
}

Member mk_member(const NodeId& id, const std::string& ep) {
    Member m;
    m.id = id;
    m.endpoint = ep;
    return m;
}

}  // namespace

TEST_CASE("scaled_key matches the reference for random indices") {
    std::mt19937_64 rng(11);
    for (uint32_t bits : {1u, 7u, 8u, 12u, 16u, 33u, 48u, 64u}) {
        for (int i = 0; i < 50; ++i) {
            uint64_t index = rng();
            if (bits < 64) index &= (uint64_t(1) << bits) - 1;
            CHECK(scaled_key(index, bits) == oracle_scaled_key(index, bits));
        }
    }
    CHECK_THROWS_AS(scaled_key(0, 0), Error);
    CHECK_THROWS_AS(scaled_key(0, 65), Error);
    // The only set bits sit in the top `bits` positions.
    NodeId k = scaled_key(1, 12);
    CHECK(k.bytes[1] == 0x10);  // 1 << (16 - 12) within the second byte
    for (size_t i = 2; i < k.bytes.size(); ++i) CHECK(k.bytes[i] == 0);
}

TEST_CASE("n_closest agrees with a full sort and clamps n") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 40; ++trial) {
        auto ids = rand_ids(rng, 1 + rng() % 32);
        NodeId key = rand_id(rng);
        for (size_t n : {size_t(1), size_t(3), ids.size(), ids.size() + 5}) {
            auto got = n_closest(ids, key, n);
            auto want = oracle_n_closest(ids, key, n);
            CHECK(got == want);
        }
    }
    CHECK(n_closest({}, NodeId{}, 3).empty());
}

TEST_CASE("responsible_union equals the per-cell brute force on random segments") {
    std::mt19937_64 rng(13);
    size_t trials = 0;
    for (uint32_t index_bits : {3u, 8u, 12u}) {
        uint64_t cells = uint64_t(1) << index_bits;
        for (size_t members : {size_t(1), size_t(3), size_t(7), size_t(24)}) {
            auto ids = rand_ids(rng, members);
            for (size_t n_rep : {size_t(1), size_t(2), size_t(3), size_t(5)}) {
                for (int t = 0; t < 12; ++t) {
                    uint64_t a = rng() % cells;
                    uint64_t b = rng() % cells;
                    Segment seg{std::min(a, b), std::max(a, b)};
                    auto got = responsible_union(ids, seg, index_bits, n_rep);
                    CHECK(std::is_sorted(got.begin(), got.end()));

                    std::set<NodeId> want;
                    for (uint64_t idx = seg.first;; ++idx) {
                        auto close = oracle_n_closest(ids, oracle_scaled_key(idx, index_bits),
                                                      n_rep);
                        want.insert(close.begin(), close.end());
                        if (idx == seg.last) break;
                    }
                    std::vector<NodeId> want_v(want.begin(), want.end());
                    REQUIRE(got == want_v);
                    ++trials;
                }
            }
        }
    }
    CHECK(trials > 500);
}

TEST_CASE("responsible_union over a whole small space touches every member's share") {
    std::mt19937_64 rng(14);
    uint32_t index_bits = 8;
    auto ids = rand_ids(rng, 16);
    Segment all{0, 255};
    auto got = responsible_union(ids, all, index_bits, 2);
    std::set<NodeId> want;
    for (uint64_t idx = 0; idx < 256; ++idx) {
        auto close = oracle_n_closest(ids, oracle_scaled_key(idx, index_bits), 2);
        want.insert(close.begin(), close.end());
    }
    CHECK(got == std::vector<NodeId>(want.begin(), want.end()));
}

TEST_CASE("responsible_union handles multi-segment coverings, duplicates and edge cases") {
    std::mt19937_64 rng(15);
    uint32_t index_bits = 10;
    auto ids = rand_ids(rng, 9);
    std::vector<Segment> segs = {{0, 3}, {17, 17}, {512, 700}, {1023, 1023}};
    auto got = responsible_union(ids, segs, index_bits, 3);
    std::set<NodeId> want;
    for (const Segment& s : segs)
        for (uint64_t idx = s.first;; ++idx) {
            auto close = oracle_n_closest(ids, oracle_scaled_key(idx, index_bits), 3);
            want.insert(close.begin(), close.end());
            if (idx == s.last) break;
        }
    CHECK(got == std::vector<NodeId>(want.begin(), want.end()));

    // Duplicate member ids collapse.
    std::vector<NodeId> dup = ids;
    dup.insert(dup.end(), ids.begin(), ids.end());
    CHECK(responsible_union(dup, segs, index_bits, 3) == got);

    // n_rep >= members: everyone in range is responsible.
    auto everyone = responsible_union(ids, Segment{5, 6}, index_bits, 100);
    CHECK(everyone == ids);

    CHECK(responsible_union({}, Segment{0, 1}, index_bits, 2).empty());
    CHECK_THROWS_AS(responsible_union(ids, Segment{3, 2}, index_bits, 2), Error);
    CHECK_THROWS_AS(responsible_union(ids, Segment{0, 1 << 12}, index_bits, 2), Error);
}

TEST_CASE("responsible_union at 48 index bits stays exact on sparse segments") {
    // Wide spaces cannot be brute-forced cell by cell, but a degenerate
    // segment can: it is a single n_closest call.
    std::mt19937_64 rng(16);
    uint32_t index_bits = 48;
    auto ids = rand_ids(rng, 20);
    for (int t = 0; t < 60; ++t) {
        uint64_t idx = rng() & ((uint64_t(1) << index_bits) - 1);
        auto got = responsible_union(ids, Segment{idx, idx}, index_bits, 3);
        auto close = oracle_n_closest(ids, oracle_scaled_key(idx, index_bits), 3);
        std::sort(close.begin(), close.end());
        CHECK(got == close);
    }
    // And short ranges via the brute force.
    for (int t = 0; t < 10; ++t) {
        uint64_t lo = rng() & ((uint64_t(1) << index_bits) - 1 - 64);
        Segment seg{lo, lo + 37};
        auto got = responsible_union(ids, seg, index_bits, 2);
        std::set<NodeId> want;
        for (uint64_t idx = seg.first; idx <= seg.last; ++idx) {
            auto close = oracle_n_closest(ids, oracle_scaled_key(idx, index_bits), 2);
            want.insert(close.begin(), close.end());
        }
        CHECK(got == std::vector<NodeId>(want.begin(), want.end()));
    }
}

TEST_CASE("region ring stays sorted through add/remove/find") {
    std::mt19937_64 rng(17);
    Region r;
    auto ids = rand_ids(rng, 12);
    std::vector<NodeId> shuffled = ids;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    for (const NodeId& id : shuffled) CHECK(r.add(mk_member(id, "ep:" + id.short_hex())));
    CHECK(r.ring.size() == 12);
    CHECK(r.ids() == ids);
    CHECK_FALSE(r.add(mk_member(ids[3], "other")));  // duplicate id refreshes
    CHECK(r.ring.size() == 12);
    CHECK(r.find(ids[5]) != nullptr);
    CHECK(r.find(ids[5])->id == ids[5]);
    CHECK(r.remove(ids[5]));
    CHECK_FALSE(r.remove(ids[5]));
    CHECK(r.find(ids[5]) == nullptr);
    CHECK(r.ring.size() == 11);
    CHECK(std::is_sorted(r.ring.begin(), r.ring.end(),
                         [](const Member& a, const Member& b) { return a.id < b.id; }));
}

TEST_CASE("quadtree: root, leaf lookup, split tiling and version bumps") {
    Member boss = mk_member(NodeId::from_hex("00000000000000000000000000000000000000aa"), "m:1");
    QuadTreeSnapshot s = QuadTreeSnapshot::single_root(boss, 5);
    CHECK(s.version == 1);
    CHECK(s.leaves().size() == 1);
    const RegionMeta* root = s.find("");
    REQUIRE(root != nullptr);
    CHECK(root->leaf);
    CHECK(root->master == boss.id);
    CHECK(s.leaf_for({10, 10}) == root);

    // Split the root into four quadrants.
    std::vector<RegionMeta> kids(4);
    for (uint32_t d = 0; d < 4; ++d) {
        kids[d].path = std::string(1, char('0' + d));
        kids[d].box = root->box.quadrant_box(d);
        kids[d].leaf = true;
        kids[d].master = boss.id;
        kids[d].master_endpoint = boss.endpoint;
        kids[d].ring_size = 2;
    }
    s.apply_split("", kids);
    CHECK(s.version == 2);
    CHECK(s.leaves().size() == 4);
    CHECK_FALSE(s.find("")->leaf);

    // Every sample point lands in exactly one leaf, and that leaf contains it.
    std::mt19937_64 rng(18);
    std::uniform_real_distribution<double> lat(-90, 90), lon(-180, 180);
    for (int i = 0; i < 200; ++i) {
        GeoPoint p{lat(rng), lon(rng)};
        const RegionMeta* leaf = s.leaf_for(p);
        REQUIRE(leaf != nullptr);
        CHECK(leaf->box.contains(p));
        size_t containing = 0;
        for (const RegionMeta* l : s.leaves())
            containing += l->box.contains(p) ? 1 : 0;
        CHECK(containing >= 1);  // shared edges may touch two boxes
        CHECK(leaf->path.size() == 1);
    }
    // NE corner descends into the NE child, SW corner into the SW child.
    CHECK(s.leaf_for({89, 179})->path == "3");
    CHECK(s.leaf_for({-89, -179})->path == "0");

    // A second-level split nests paths.
    std::vector<RegionMeta> kids2(4);
    const RegionMeta* q2 = s.find("2");
    for (uint32_t d = 0; d < 4; ++d) {
        kids2[d].path = "2" + std::string(1, char('0' + d));
        kids2[d].box = q2->box.quadrant_box(d);
        kids2[d].leaf = true;
        kids2[d].master = boss.id;
        kids2[d].master_endpoint = boss.endpoint;
    }
    s.apply_split("2", kids2);
    CHECK(s.version == 3);
    CHECK(s.leaves().size() == 7);
    CHECK(s.leaf_for({89, -179})->path.substr(0, 1) == "2");
    CHECK(s.leaf_for({89, -179})->path.size() == 2);

    CHECK_THROWS_AS(s.apply_split("2", kids2), Error);       // already internal
    CHECK_THROWS_AS(s.apply_split("unknown", kids2), Error); // no such region
}

TEST_CASE("routing table: exact nearest neighbours while buckets have room") {
    std::mt19937_64 rng(19);
    NodeId self = rand_id(rng);
    RoutingTable t(self, 16);
    auto ids = rand_ids(rng, 40);
    std::vector<Member> members;
    for (const NodeId& id : ids)
        if (id != self) members.push_back(mk_member(id, "ep:" + id.short_hex()));
    size_t inserted = 0;
    for (const Member& m : members) inserted += t.insert(m) ? 1 : 0;
    CHECK(t.size() == inserted);
    CHECK(inserted > 30);  // random ids spread across buckets; few collisions

    // closest() must agree with a brute-force sort of what the table holds.
    std::vector<NodeId> held;
    for (const Member& m : members)
        if (t.find(m.id)) held.push_back(m.id);
    for (int trial = 0; trial < 30; ++trial) {
        NodeId target = rand_id(rng);
        auto got = t.closest(target, 7);
        auto want = oracle_n_closest(held, target, 7);
        REQUIRE(got.size() == want.size());
        for (size_t i = 0; i < got.size(); ++i) CHECK(got[i].id == want[i]);
    }

    // Remove forgets, insert refreshes.
    NodeId victim = held[0];
    t.remove(victim);
    CHECK(t.find(victim) == nullptr);
    CHECK(t.size() == inserted - 1);
    Member back = mk_member(victim, "ep:new");
    CHECK(t.insert(back));
    CHECK(t.find(victim)->endpoint == "ep:new");
    CHECK(t.insert(back));  // refresh, not a failure
    CHECK(t.size() == inserted);
}

TEST_CASE("routing table: a full far bucket rejects, near buckets keep room") {
    NodeId self{};  // all zero
    RoutingTable t(self, 2);
    // Ids with the top bit set all share prefix length 0 -> one far bucket.
    int far_accepted = 0, far_rejected = 0;
    std::mt19937_64 rng(20);
    for (int i = 0; i < 10; ++i) {
        NodeId id = rand_id(rng);
        id.bytes[0] |= 0x80;
        if (t.insert(mk_member(id, "x"))) ++far_accepted;
        else ++far_rejected;
    }
    CHECK(far_accepted == 2);
    CHECK(far_rejected == 8);
    // A nearby id (long shared prefix) lands in its own bucket regardless.
    NodeId near{};
    near.bytes[19] = 1;
    CHECK(t.insert(mk_member(near, "near")));
}

TEST_CASE("ring neighbours wrap around the sorted ring") {
    std::mt19937_64 rng(21);
    auto ids = rand_ids(rng, 9);
    for (size_t i = 0; i < ids.size(); ++i) {
        RingNeighbours nb = ring_neighbours(ids, ids[i]);
        CHECK(nb.left == ids[(i + ids.size() - 1) % ids.size()]);
        CHECK(nb.right == ids[(i + 1) % ids.size()]);
    }
    auto one = std::vector<NodeId>{ids[0]};
    RingNeighbours self_nb = ring_neighbours(one, ids[0]);
    CHECK(self_nb.left == ids[0]);
    CHECK(self_nb.right == ids[0]);
    CHECK_THROWS_AS(ring_neighbours({}, ids[0]), Error);
    CHECK_THROWS_AS(ring_neighbours(one, ids[1]), Error);
}
