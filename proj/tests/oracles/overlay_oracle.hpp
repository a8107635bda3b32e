#pragma once

// Frozen reference oracles for overlay responsibility and election.
//
// Everything here is deliberately brute-force and independent of the
// production algorithms: replica sets come from sorting the full membership
// by XOR distance per key, region responsibility from enumerating every
// cell of the target box, and the election winner from taking the maximum
// surviving identifier. These definitions are the contract the production
// code is checked against; they must not be edited to chase its output.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "rpmesh/clusters.hpp"
#include "rpmesh/digest.hpp"
#include "rpmesh/hilbert.hpp"

namespace rpmesh::testing {

// Key for curve index i: the index bits left-aligned in the 160-bit space.
inline NodeId oracle_scaled_key(uint64_t index, uint32_t index_bits) {
    NodeId k{};
    uint64_t top = index_bits >= 64 ? index : (index << (64 - index_bits));
    for (int i = 0; i < 8; ++i) k.bytes[i] = uint8_t(top >> (56 - 8 * i));
    return k;
}

// The n ids closest to `target` by XOR distance, brute force.
inline std::vector<NodeId> oracle_n_closest(std::vector<NodeId> ids, const NodeId& target,
                                            size_t n) {
    std::sort(ids.begin(), ids.end(), [&](const NodeId& a, const NodeId& b) {
        return xor_distance(a, target) < xor_distance(b, target);
    });
    if (ids.size() > n) ids.resize(n);
    return ids;
}

// Responsibility of every cell index in [0, 2^index_bits): memoised so that
// per-post oracle sets are cheap unions. Only usable for small spaces.
class CellResponsibilityOracle {
  public:
    CellResponsibilityOracle(std::vector<NodeId> members, uint32_t index_bits, size_t n_rep)
        : members_(std::move(members)), index_bits_(index_bits), n_rep_(n_rep) {}

    const std::vector<NodeId>& responsible(uint64_t index) const {
        auto it = memo_.find(index);
        if (it == memo_.end())
            it = memo_
                     .emplace(index, oracle_n_closest(members_,
                                                      oracle_scaled_key(index, index_bits_), n_rep_))
                     .first;
        return it->second;
    }

    // Union of replica sets over every cell of the box (cells enumerated by
    // an axis odometer — no curve code involved).
    std::set<NodeId> responsible_for_box(const AxisBox& box, uint32_t bits) const {
        std::set<NodeId> out;
        std::vector<uint64_t> cursor;
        cursor.reserve(box.axes.size());
        for (const auto& iv : box.axes) cursor.push_back(iv.lo);
        while (true) {
            uint64_t index = oracle_cell_index(cursor, bits);
            const auto& r = responsible(index);
            out.insert(r.begin(), r.end());
            size_t axis = cursor.size();
            while (axis > 0) {
                --axis;
                if (cursor[axis] < box.axes[axis].hi) {
                    ++cursor[axis];
                    break;
                }
                cursor[axis] = box.axes[axis].lo;
                if (axis == 0) return out;
            }
        }
    }

    // Index of a coordinate tuple, via the production curve encoder — the
    // curve itself is pinned separately by the golden-vector suite, so using
    // it here does not let responsibility errors hide.
    static uint64_t oracle_cell_index(const std::vector<uint64_t>& axes, uint32_t bits) {
        return hilbert_encode(axes, bits);
    }

  private:
    std::vector<NodeId> members_;
    uint32_t index_bits_;
    size_t n_rep_;
    mutable std::map<uint64_t, std::vector<NodeId>> memo_;
};

// Ring election: the winner must be the maximum surviving identifier.
inline NodeId oracle_election_winner(const std::vector<NodeId>& survivors) {
    return *std::max_element(survivors.begin(), survivors.end());
}

// Probe-message budget for a ring of m participants: 8m(1 + ceil(log2 m)).
inline uint64_t oracle_election_probe_budget(size_t m) {
    uint64_t lg = 0;
    while ((size_t(1) << lg) < m) ++lg;
    return 8ull * m * (1 + lg);
}

}  // namespace rpmesh::testing
