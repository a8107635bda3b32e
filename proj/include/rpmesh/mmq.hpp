#pragma once

// Crash-safe single-writer append queue over memory-mapped segment files.
//
// On-disk layout under the queue directory:
//   segment-<base_offset, 20 digits>.log   fixed-size, zero-filled at creation
//   cursors.tsv                            consumer_id TAB offset, atomic rename
//   lock                                   flock'd exclusively by the writer
//
// Record framing (big-endian): u32 payload length | u32 crc32(payload) |
// u64 timestamp_ms | payload. Offsets are dense record numbers, not byte
// positions. Bytes after the active segment's write cursor are zero, which
// is what recovery uses to find the tail; empty payloads are rejected so a
// zero length byte always means "no record here".
//
// Durability model: the OS page cache keeps mapped writes alive if the
// process dies; power loss is out of scope. recover() (implied by open)
// scans the last segment, truncates the first torn or checksum-invalid
// record, and zeroes everything after it. Corruption below the recovered
// head discovered during reads raises QueueCorrupt and is never skipped.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rpmesh/bytes.hpp"

namespace rpmesh {

struct QueueRecord {
    uint64_t offset = 0;
    uint64_t timestamp_ms = 0;
    Bytes payload;

    bool operator==(const QueueRecord&) const = default;
};

struct QueueOptions {
    uint64_t segment_bytes = 64ull << 20;
    uint64_t max_record_bytes = 16ull << 20;
    size_t retain_segments = 0;  // 0 = keep everything
    bool read_only = false;
};

class Queue {
  public:
    // Opens (creating the directory if needed) and recovers the queue.
    static Queue open(const std::string& dir, QueueOptions opts = {});

    Queue(Queue&&) noexcept;
    Queue& operator=(Queue&&) noexcept;
    ~Queue();

    uint64_t append(BytesView payload);  // stamps current wall-clock ms
    uint64_t append(BytesView payload, uint64_t timestamp_ms);

    // Records in offset order starting at from_offset; empty when
    // from_offset >= head(); OffsetTrimmed when the segment was retired.
    std::vector<QueueRecord> read(uint64_t from_offset, size_t max_records) const;

    uint64_t head() const;    // next offset to be assigned
    uint64_t oldest() const;  // first retained offset

    void commit(const std::string& consumer_id, uint64_t offset);
    uint64_t committed(const std::string& consumer_id) const;  // 0 when unknown

    void sync();  // msync active segment + flush cursors

    const std::string& dir() const;

  private:
    Queue();
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Append-throughput comparison: the mapped queue path vs. an equivalent
// plain write()+fdatasync-per-record log. Both write the same framing to
// fresh files under `dir`.
struct BenchResult {
    double mapped_records_per_sec = 0;
    double baseline_records_per_sec = 0;
    uint64_t mapped_records = 0;
    uint64_t baseline_records = 0;
};
BenchResult run_append_benchmark(const std::string& dir, size_t payload_bytes,
                                 uint64_t mapped_records, uint64_t baseline_records,
                                 uint64_t segment_bytes = 64ull << 20);

}  // namespace rpmesh
