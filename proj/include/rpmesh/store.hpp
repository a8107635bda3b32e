#pragma once

// Local profile/data store: every entry lives in a crash-safe append log
// (the cold tier) while a byte-bounded LRU cache keeps recently used data
// bytes in memory (the hot tier). Entries are keyed by a content digest of
// profile bytes + data, so re-storing identical content refreshes its
// timestamp instead of duplicating it. Deletes append a tombstone record
// carrying the delete profile; recovery replays puts and tombstones in log
// order, so acknowledged operations survive a crash.
//
// Retrieval:
//   query_exact     term-by-term profile equality (case-folded at parse)
//   query_wildcard  the matching predicate, candidate-narrowed through
//                   per-axis value indexes when the query has <= dims terms
//   query           dispatches on whether the profile is all-concrete
//
// On-disk layout under the store directory:
//   log/        append queue of framed put/tombstone records
//   index.tsv   snapshot of live entry metadata, written on clean close and
//               trusted on open only when its recorded log head still
//               matches; otherwise the log is replayed (and the file
//               regenerated on the next clean close)
//
// The cold log is compacted (live records rewritten to a fresh log) once it
// doubles past the previous compaction point.

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rpmesh/bytes.hpp"
#include "rpmesh/constants.hpp"
#include "rpmesh/digest.hpp"
#include "rpmesh/profile.hpp"

namespace rpmesh {

struct StoredEntry {
    Profile key_profile;
    uint64_t sfc_index = 0;  // curve cell for simple profiles, 0 otherwise
    bool simple = false;
    Bytes data;
    std::array<uint8_t, 32> digest{};
    uint64_t stored_at = 0;  // milliseconds
    NodeId origin{};
};

// digest = hash(profile bytes + data): the duplicate-suppression key.
std::array<uint8_t, 32> stored_entry_digest(const Profile& p, BytesView data);

struct StoreOptions {
    SpaceConfig space;
    uint64_t hot_capacity_bytes = 8ull << 20;
    uint64_t log_segment_bytes = 4ull << 20;
    // Compaction triggers when the log holds at least this many records and
    // has doubled since the last compaction (or initial open).
    uint64_t compact_min_records = 1024;
};

struct StoreStats {
    uint64_t puts = 0;            // put calls accepted (including duplicates)
    uint64_t dup_puts = 0;        // puts collapsed into an existing entry
    uint64_t deletes_applied = 0; // entries removed by delete_matching
    uint64_t tombstones = 0;      // tombstone records appended
    uint64_t live_entries = 0;
    uint64_t log_records = 0;     // records in the cold log (puts + tombstones)
    uint64_t hot_entries = 0;
    uint64_t hot_bytes = 0;
    uint64_t hot_hits = 0;        // result data served from memory
    uint64_t cold_reads = 0;      // result data fetched from the log
    uint64_t evictions = 0;
    uint64_t narrowed_queries = 0;
    uint64_t full_scans = 0;
    uint64_t compactions = 0;
};

class Store {
  public:
    static Store open(const std::string& dir, StoreOptions opts);

    Store(Store&&) noexcept;
    Store& operator=(Store&&) noexcept;
    ~Store();  // writes index.tsv

    // Appends to the cold log, then inserts into the hot tier. Duplicate
    // digests refresh the existing entry's timestamp. Data larger than a
    // wire field (65535 bytes) -> PayloadTooLarge; out of disk -> StoreFailed.
    void put(const Profile& p, BytesView data, const NodeId& origin, uint64_t stored_at_ms);

    // p must be all-concrete (exact pairs / pattern-free attribute terms).
    std::vector<StoredEntry> query_exact(const Profile& p);
    // All entries whose key profile matches p.
    std::vector<StoredEntry> query_wildcard(const Profile& p);
    // query_exact when p is all-concrete, query_wildcard otherwise.
    std::vector<StoredEntry> query(const Profile& p);

    // Removes every entry matching p; returns how many were removed.
    size_t delete_matching(const Profile& p);

    StoreStats stats() const;

    // Writes index.tsv now (normally done by the destructor).
    void flush_index();

  private:
    Store();
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace rpmesh
