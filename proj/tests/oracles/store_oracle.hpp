#pragma once

// Brute-force reference model for the profile store. Every operation is a
// linear pass over a plain vector using only the public matching predicate
// and profile equality, with none of the store's indexing, tiering, logging,
// or compaction. The store under test must agree with this model exactly.
//
// This file is an oracle: it must not be edited to chase the production
// output. If the two disagree, the production store is wrong until proven
// otherwise against the operation postconditions themselves.

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rpmesh/bytes.hpp"
#include "rpmesh/digest.hpp"
#include "rpmesh/matching.hpp"
#include "rpmesh/profile.hpp"

namespace rpmesh::testing {

struct OracleEntry {
    Profile profile;
    Bytes data;
    std::array<uint8_t, 32> digest{};
    uint64_t stored_at = 0;
    NodeId origin{};
};

inline std::array<uint8_t, 32> oracle_entry_digest(const Profile& p, BytesView data) {
    Bytes material = p.encode();
    material.insert(material.end(), data.begin(), data.end());
    return sha256(material);
}

class StoreOracle {
  public:
    // Same digest, same logical entry: only the timestamp refreshes.
    void put(const Profile& p, BytesView data, const NodeId& origin, uint64_t stored_at) {
        auto digest = oracle_entry_digest(p, data);
        for (OracleEntry& e : entries_) {
            if (e.digest == digest) {
                e.stored_at = stored_at;
                return;
            }
        }
        OracleEntry e;
        e.profile = p;
        e.data.assign(data.begin(), data.end());
        e.digest = digest;
        e.stored_at = stored_at;
        e.origin = origin;
        entries_.push_back(std::move(e));
    }

    // Exact retrieval is term-by-term profile equality, not matching.
    std::vector<OracleEntry> query_exact(const Profile& p) const {
        std::vector<OracleEntry> out;
        for (const OracleEntry& e : entries_)
            if (e.profile == p) out.push_back(e);
        return out;
    }

    std::vector<OracleEntry> query_wildcard(const Profile& p) const {
        std::vector<OracleEntry> out;
        for (const OracleEntry& e : entries_)
            if (matches(e.profile, p)) out.push_back(e);
        return out;
    }

    size_t delete_matching(const Profile& p) {
        size_t before = entries_.size();
        std::erase_if(entries_, [&](const OracleEntry& e) { return matches(e.profile, p); });
        return before - entries_.size();
    }

    const std::vector<OracleEntry>& entries() const { return entries_; }

    // Canonical shape for set comparison: sorted digests.
    std::vector<std::array<uint8_t, 32>> digests() const {
        std::vector<std::array<uint8_t, 32>> d;
        for (const OracleEntry& e : entries_) d.push_back(e.digest);
        std::sort(d.begin(), d.end());
        return d;
    }

  private:
    std::vector<OracleEntry> entries_;
};

}  // namespace rpmesh::testing
