#include "rpmesh/mmq.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <system_error>

#include "rpmesh/digest.hpp"
#include "rpmesh/errors.hpp"

namespace fs = std::filesystem;

namespace rpmesh {
namespace {

constexpr uint64_t kHeaderBytes = 16;  // u32 len | u32 crc | u64 timestamp
constexpr size_t kIndexStride = 256;   // sparse index: one entry per N records

uint64_t now_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

std::string segment_name(uint64_t base) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "segment-%020llu.log",
                  static_cast<unsigned long long>(base));
    return buf;
}

uint64_t read_be32(const uint8_t* p) {
    return (uint64_t(p[0]) << 24) | (uint64_t(p[1]) << 16) | (uint64_t(p[2]) << 8) | p[3];
}

uint64_t read_be64(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
    return v;
}

void write_be32(uint8_t* p, uint32_t v) {
    p[0] = uint8_t(v >> 24);
    p[1] = uint8_t(v >> 16);
    p[2] = uint8_t(v >> 8);
    p[3] = uint8_t(v);
}

void write_be64(uint8_t* p, uint64_t v) {
    for (int i = 7; i >= 0; --i) {
        p[i] = uint8_t(v);
        v >>= 8;
    }
}

struct MappedSegment {
    uint64_t base = 0;
    int fd = -1;
    uint8_t* map = nullptr;
    uint64_t size = 0;
    uint64_t write_pos = 0;  // end of valid data (exact for active; lazy for sealed)
    uint64_t count = 0;      // records in this segment (exact once scanned)
    bool scanned = false;    // write_pos/count/index valid
    std::vector<std::pair<uint64_t, uint64_t>> index;  // (record #, byte pos)

    void unmap() {
        if (map) ::munmap(map, size);
        if (fd >= 0) ::close(fd);
        map = nullptr;
        fd = -1;
    }
};

}  // namespace

struct Queue::Impl {
    std::string dir;
    QueueOptions opts;
    int lock_fd = -1;
    std::vector<MappedSegment> segments;  // ascending base; back() is active
    uint64_t head = 0;
    std::map<std::string, uint64_t> cursors;

    ~Impl() {
        for (auto& s : segments) s.unmap();
        if (lock_fd >= 0) {
            ::flock(lock_fd, LOCK_UN);
            ::close(lock_fd);
        }
    }

    std::string path(const std::string& name) const { return dir + "/" + name; }

    void map_segment(MappedSegment& s, const std::string& file, bool fresh) {
        int flags = opts.read_only ? O_RDONLY : O_RDWR;
        if (fresh) flags |= O_CREAT | O_EXCL;
        s.fd = ::open(file.c_str(), flags, 0644);
        if (s.fd < 0)
            throw Error(Errc::QueueCorrupt, "cannot open " + file + ": " + std::strerror(errno));
        if (fresh) {
            if (::ftruncate(s.fd, static_cast<off_t>(opts.segment_bytes)) != 0) {
                int e = errno;
                ::close(s.fd);
                throw Error(e == ENOSPC ? Errc::AppendFailed : Errc::QueueCorrupt,
                            "cannot size " + file + ": " + std::strerror(e));
            }
            s.size = opts.segment_bytes;
        } else {
            struct stat st{};
            if (::fstat(s.fd, &st) != 0 || st.st_size < static_cast<off_t>(kHeaderBytes)) {
                ::close(s.fd);
                throw Error(Errc::QueueCorrupt, "segment too small: " + file);
            }
            s.size = static_cast<uint64_t>(st.st_size);
        }
        int prot = PROT_READ | (opts.read_only ? 0 : PROT_WRITE);
        void* m = ::mmap(nullptr, s.size, prot, MAP_SHARED, s.fd, 0);
        if (m == MAP_FAILED) {
            ::close(s.fd);
            throw Error(Errc::QueueCorrupt, "cannot map " + file + ": " + std::strerror(errno));
        }
        s.map = static_cast<uint8_t*>(m);
    }

    enum class Scan {
        Tail,          // zero out the first invalid record and stop (recovery)
        TailReadOnly,  // stop at the first invalid record without writing
        Sealed,        // any invalid record below the implied count is corruption
    };

    // Walks the record chain from byte 0. For sealed segments `expected`
    // gives the record count implied by the next segment's base; falling
    // short means mid-log damage.
    void scan_segment(MappedSegment& s, Scan mode, uint64_t expected) {
        uint64_t pos = 0;
        s.count = 0;
        s.index.clear();
        while (pos + kHeaderBytes <= s.size && (mode != Scan::Sealed || s.count < expected)) {
            uint64_t len = read_be32(s.map + pos);
            if (len == 0) break;  // zero tail
            uint64_t crc_stored = read_be32(s.map + pos + 4);
            bool fits = len <= opts.max_record_bytes && pos + kHeaderBytes + len <= s.size;
            bool ok = fits && crc32(BytesView(s.map + pos + kHeaderBytes, len)) == crc_stored;
            if (!ok) {
                if (mode == Scan::Sealed)
                    throw Error(Errc::QueueCorrupt,
                                "checksum-invalid record inside sealed segment " +
                                    segment_name(s.base));
                if (mode == Scan::Tail) std::memset(s.map + pos, 0, s.size - pos);
                break;
            }
            if (s.count % kIndexStride == 0) s.index.emplace_back(s.count, pos);
            ++s.count;
            pos += kHeaderBytes + len;
        }
        if (mode == Scan::Sealed && s.count != expected)
            throw Error(Errc::QueueCorrupt, "sealed segment " + segment_name(s.base) +
                                                " holds " + std::to_string(s.count) +
                                                " records, expected " + std::to_string(expected));
        s.write_pos = pos;
        s.scanned = true;
    }

    MappedSegment& segment_for(uint64_t offset) {
        // last segment whose base <= offset
        auto it = std::upper_bound(segments.begin(), segments.end(), offset,
                                   [](uint64_t o, const MappedSegment& s) { return o < s.base; });
        return *std::prev(it);
    }

    void ensure_scanned(MappedSegment& s) {
        if (s.scanned) return;
        size_t i = static_cast<size_t>(&s - segments.data());
        uint64_t expected = (i + 1 < segments.size() ? segments[i + 1].base : head) - s.base;
        scan_segment(s, Scan::Sealed, expected);
    }

    void roll_segment() {
        MappedSegment s;
        s.base = head;
        map_segment(s, path(segment_name(head)), /*fresh=*/true);
        s.scanned = true;
        segments.push_back(std::move(s));
        apply_retention();
    }

    void apply_retention() {
        // With no registered cursors nothing may be thrown away: a consumer
        // that never committed still starts from offset 0 after a restart.
        if (opts.retain_segments == 0 || cursors.empty()) return;
        while (segments.size() > opts.retain_segments) {
            uint64_t next_base = segments[1].base;
            bool passed = true;
            for (const auto& [id, off] : cursors)
                if (off < next_base) {
                    passed = false;
                    break;
                }
            if (!passed) break;
            segments.front().unmap();
            fs::remove(path(segment_name(segments.front().base)));
            segments.erase(segments.begin());
        }
    }

    void load_cursors() {
        std::ifstream in(path("cursors.tsv"));
        std::string line;
        while (std::getline(in, line)) {
            size_t tab = line.find('\t');
            if (tab == std::string::npos) continue;
            try {
                cursors[line.substr(0, tab)] = std::stoull(line.substr(tab + 1));
            } catch (const std::exception&) {
                throw Error(Errc::QueueCorrupt, "unparseable cursor line: " + line);
            }
        }
    }

    void save_cursors() {
        std::string tmp = path("cursors.tsv.tmp");
        {
            std::ofstream out(tmp, std::ios::trunc);
            for (const auto& [id, off] : cursors) out << id << '\t' << off << '\n';
            out.flush();
            if (!out) throw Error(Errc::AppendFailed, "cannot write cursor file");
        }
        if (::rename(tmp.c_str(), path("cursors.tsv").c_str()) != 0)
            throw Error(Errc::AppendFailed,
                        std::string("cursor rename failed: ") + std::strerror(errno));
    }
};

Queue::Queue() : impl_(new Impl) {}
Queue::Queue(Queue&&) noexcept = default;
Queue& Queue::operator=(Queue&&) noexcept = default;
Queue::~Queue() = default;

Queue Queue::open(const std::string& dir, QueueOptions opts) {
    if (opts.segment_bytes < kHeaderBytes + 1)
        throw Error(Errc::QueueCorrupt, "segment size too small");
    if (opts.max_record_bytes + kHeaderBytes > opts.segment_bytes)
        opts.max_record_bytes = opts.segment_bytes - kHeaderBytes;

    Queue q;
    Impl& im = *q.impl_;
    im.dir = dir;
    im.opts = opts;
    fs::create_directories(dir);

    if (!opts.read_only) {
        im.lock_fd = ::open(im.path("lock").c_str(), O_CREAT | O_RDWR, 0644);
        if (im.lock_fd < 0)
            throw Error(Errc::QueueCorrupt, "cannot open lock file in " + dir);
        if (::flock(im.lock_fd, LOCK_EX | LOCK_NB) != 0)
            throw Error(Errc::AppendFailed, "queue " + dir + " is locked by another writer");
    }

    // Discover segments by filename.
    std::vector<uint64_t> bases;
    for (const auto& ent : fs::directory_iterator(dir)) {
        std::string name = ent.path().filename().string();
        if (name.rfind("segment-", 0) != 0) continue;
        if (name.size() != 8 + 20 + 4 || name.substr(28) != ".log")
            throw Error(Errc::QueueCorrupt, "unparseable segment file name: " + name);
        bases.push_back(std::stoull(name.substr(8, 20)));
    }
    std::sort(bases.begin(), bases.end());
    // A crash between creating the newest segment file and sizing it leaves a
    // short (usually zero-byte) file. Writable opens re-extend it with zeros;
    // the extension reads back as a zero tail, so ordinary tail recovery
    // applies. Read-only opens treat an unsized newest segment as empty.
    if (!bases.empty()) {
        std::string last_file = im.path(segment_name(bases.back()));
        uint64_t sz = fs::file_size(last_file);
        if (!opts.read_only && sz < opts.segment_bytes) fs::resize_file(last_file, opts.segment_bytes);
    }
    for (uint64_t b : bases) {
        MappedSegment s;
        s.base = b;
        std::string file = im.path(segment_name(b));
        if (opts.read_only && b == bases.back() && fs::file_size(file) < kHeaderBytes) {
            s.scanned = true;  // record-less: too short to hold even one header
        } else {
            im.map_segment(s, file, /*fresh=*/false);
        }
        im.segments.push_back(std::move(s));
    }
    if (!im.segments.empty()) {
        // Recovery proper: walk the last segment, truncating a torn tail.
        MappedSegment& last = im.segments.back();
        if (last.map)
            im.scan_segment(last, opts.read_only ? Impl::Scan::TailReadOnly : Impl::Scan::Tail, 0);
        im.head = last.base + last.count;
    }
    im.load_cursors();
    return q;
}

uint64_t Queue::append(BytesView payload) { return append(payload, now_ms()); }

uint64_t Queue::append(BytesView payload, uint64_t timestamp_ms) {
    Impl& im = *impl_;
    if (im.opts.read_only) throw Error(Errc::AppendFailed, "queue opened read-only");
    if (payload.empty()) throw Error(Errc::AppendFailed, "empty payloads are not appendable");
    if (payload.size() > im.opts.max_record_bytes)
        throw Error(Errc::PayloadTooLarge,
                    "payload of " + std::to_string(payload.size()) + " bytes exceeds cap " +
                        std::to_string(im.opts.max_record_bytes));

    const uint64_t need = kHeaderBytes + payload.size();
    if (im.segments.empty() || im.segments.back().write_pos + need > im.segments.back().size)
        im.roll_segment();

    MappedSegment& s = im.segments.back();
    uint8_t* p = s.map + s.write_pos;
    write_be32(p, static_cast<uint32_t>(payload.size()));
    write_be32(p + 4, crc32(payload));
    write_be64(p + 8, timestamp_ms);
    std::memcpy(p + kHeaderBytes, payload.data(), payload.size());
    if (s.count % kIndexStride == 0) s.index.emplace_back(s.count, s.write_pos);
    s.write_pos += need;
    ++s.count;
    return im.head++;
}

std::vector<QueueRecord> Queue::read(uint64_t from_offset, size_t max_records) const {
    Impl& im = *impl_;
    std::vector<QueueRecord> out;
    if (from_offset >= im.head || max_records == 0 || im.segments.empty()) return out;
    if (from_offset < im.segments.front().base)
        throw Error(Errc::OffsetTrimmed, "offset " + std::to_string(from_offset) +
                                             " is below the oldest retained offset " +
                                             std::to_string(im.segments.front().base));

    size_t si = static_cast<size_t>(&im.segment_for(from_offset) - im.segments.data());
    uint64_t offset = from_offset;
    while (out.size() < max_records && si < im.segments.size() && offset < im.head) {
        MappedSegment& s = im.segments[si];
        im.ensure_scanned(s);
        uint64_t rec = offset - s.base;
        if (rec >= s.count) {
            ++si;
            continue;
        }
        // nearest sparse-index entry at or before rec, then walk forward
        auto it = std::upper_bound(
            s.index.begin(), s.index.end(), rec,
            [](uint64_t r, const std::pair<uint64_t, uint64_t>& e) { return r < e.first; });
        auto [at, pos] = *std::prev(it);
        while (at < rec) {
            pos += kHeaderBytes + read_be32(s.map + pos);
            ++at;
        }
        while (out.size() < max_records && rec < s.count) {
            uint64_t len = read_be32(s.map + pos);
            uint64_t crc_stored = read_be32(s.map + pos + 4);
            BytesView payload(s.map + pos + kHeaderBytes, len);
            if (crc32(payload) != crc_stored)
                throw Error(Errc::QueueCorrupt,
                            "checksum mismatch at offset " + std::to_string(offset));
            QueueRecord r;
            r.offset = offset;
            r.timestamp_ms = read_be64(s.map + pos + 8);
            r.payload.assign(payload.begin(), payload.end());
            out.push_back(std::move(r));
            pos += kHeaderBytes + len;
            ++rec;
            ++offset;
        }
        ++si;
    }
    return out;
}

uint64_t Queue::head() const { return impl_->head; }

uint64_t Queue::oldest() const {
    return impl_->segments.empty() ? impl_->head : impl_->segments.front().base;
}

void Queue::commit(const std::string& consumer_id, uint64_t offset) {
    Impl& im = *impl_;
    if (im.opts.read_only) throw Error(Errc::AppendFailed, "queue opened read-only");
    if (offset > im.head)
        throw Error(Errc::AppendFailed, "cannot commit past head");
    auto it = im.cursors.find(consumer_id);
    if (it != im.cursors.end() && offset < it->second)
        throw Error(Errc::AppendFailed, "cursor for '" + consumer_id + "' would regress from " +
                                            std::to_string(it->second) + " to " +
                                            std::to_string(offset));
    im.cursors[consumer_id] = offset;
    im.save_cursors();
    im.apply_retention();
}

uint64_t Queue::committed(const std::string& consumer_id) const {
    auto it = impl_->cursors.find(consumer_id);
    return it == impl_->cursors.end() ? 0 : it->second;
}

void Queue::sync() {
    Impl& im = *impl_;
    if (!im.segments.empty()) {
        MappedSegment& s = im.segments.back();
        ::msync(s.map, s.size, MS_SYNC);
    }
}

const std::string& Queue::dir() const { return impl_->dir; }

BenchResult run_append_benchmark(const std::string& dir, size_t payload_bytes,
                                 uint64_t mapped_records, uint64_t baseline_records,
                                 uint64_t segment_bytes) {
    namespace sc = std::chrono;
    fs::create_directories(dir);
    Bytes payload(payload_bytes, 0xAB);
    BenchResult res;
    res.mapped_records = mapped_records;
    res.baseline_records = baseline_records;

    {
        fs::remove_all(dir + "/mapped");
        QueueOptions opts;
        opts.segment_bytes = segment_bytes;
        Queue q = Queue::open(dir + "/mapped", opts);
        auto t0 = sc::steady_clock::now();
        for (uint64_t i = 0; i < mapped_records; ++i) q.append(payload, i);
        auto dt = sc::duration<double>(sc::steady_clock::now() - t0).count();
        res.mapped_records_per_sec = mapped_records / dt;
    }

    {
        std::string file = dir + "/baseline.log";
        fs::remove(file);
        int fd = ::open(file.c_str(), O_CREAT | O_WRONLY | O_APPEND, 0644);
        if (fd < 0) throw Error(Errc::AppendFailed, "cannot open baseline log");
        Bytes frame(16 + payload.size());
        write_be32(frame.data(), static_cast<uint32_t>(payload.size()));
        write_be32(frame.data() + 4, crc32(payload));
        std::memcpy(frame.data() + 16, payload.data(), payload.size());
        auto t0 = sc::steady_clock::now();
        for (uint64_t i = 0; i < baseline_records; ++i) {
            write_be64(frame.data() + 8, i);
            if (::write(fd, frame.data(), frame.size()) !=
                static_cast<ssize_t>(frame.size())) {
                ::close(fd);
                throw Error(Errc::AppendFailed, "baseline write failed");
            }
            ::fdatasync(fd);
        }
        auto dt = sc::duration<double>(sc::steady_clock::now() - t0).count();
        ::close(fd);
        res.baseline_records_per_sec = baseline_records / dt;
    }
    return res;
}

}  // namespace rpmesh
