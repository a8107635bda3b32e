#include "rpmesh/store.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <list>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_map>

#include "rpmesh/errors.hpp"
#include "rpmesh/hilbert.hpp"
#include "rpmesh/keyword_space.hpp"
#include "rpmesh/matching.hpp"
#include "rpmesh/mmq.hpp"

namespace rpmesh {
namespace fs = std::filesystem;

namespace {

// Log record payloads: a kind byte, then tag/len/value fields.
constexpr uint8_t kRecPut = 1;
constexpr uint8_t kRecTombstone = 2;
constexpr uint8_t kTagProfile = 1;
constexpr uint8_t kTagOrigin = 2;
constexpr uint8_t kTagData = 3;

void put_field(Bytes& out, uint8_t tag, BytesView value) {
    if (value.size() > kMaxFieldBytes)
        throw Error(Errc::PayloadTooLarge, "field " + std::to_string(tag) + " is " +
                                               std::to_string(value.size()) + " bytes, max " +
                                               std::to_string(kMaxFieldBytes));
    put_u8(out, tag);
    put_u16(out, static_cast<uint16_t>(value.size()));
    out.insert(out.end(), value.begin(), value.end());
}

Bytes from_hex(std::string_view s) {
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        return -1;
    };
    if (s.size() % 2) throw Error(Errc::ProtocolError, "odd hex length");
    Bytes out(s.size() / 2);
    for (size_t i = 0; i < out.size(); ++i) {
        int hi = nibble(s[2 * i]), lo = nibble(s[2 * i + 1]);
        if (hi < 0 || lo < 0) throw Error(Errc::ProtocolError, "bad hex digit");
        out[i] = uint8_t(hi << 4 | lo);
    }
    return out;
}

struct DecodedRecord {
    uint8_t kind = 0;
    Profile profile;
    NodeId origin{};
    Bytes data;
};

DecodedRecord decode_record(BytesView payload) {
    ByteReader r(payload);
    DecodedRecord rec;
    rec.kind = r.u8();
    if (rec.kind != kRecPut && rec.kind != kRecTombstone)
        throw Error(Errc::QueueCorrupt, "unknown store record kind " + std::to_string(rec.kind));
    bool have_profile = false;
    while (r.remaining() > 0) {
        uint8_t tag = r.u8();
        uint16_t len = r.u16();
        BytesView v = r.take(len);
        switch (tag) {
            case kTagProfile:
                rec.profile = Profile::decode(v);
                have_profile = true;
                break;
            case kTagOrigin:
                if (v.size() != rec.origin.bytes.size())
                    throw Error(Errc::QueueCorrupt, "store record origin must be 20 bytes");
                std::copy(v.begin(), v.end(), rec.origin.bytes.begin());
                break;
            case kTagData:
                rec.data.assign(v.begin(), v.end());
                break;
            default:
                break;  // unknown fields are skippable by design
        }
    }
    if (!have_profile) throw Error(Errc::QueueCorrupt, "store record lacks a profile");
    return rec;
}

Bytes encode_put(const Profile& p, const NodeId& origin, BytesView data) {
    Bytes out;
    put_u8(out, kRecPut);
    put_field(out, kTagProfile, p.encode());
    put_field(out, kTagOrigin, BytesView(origin.bytes.data(), origin.bytes.size()));
    put_field(out, kTagData, data);
    return out;
}

Bytes encode_tombstone(const Profile& p) {
    Bytes out;
    put_u8(out, kRecTombstone);
    put_field(out, kTagProfile, p.encode());
    return out;
}

bool all_concrete(const Profile& p) {
    for (const Term& t : p.terms) {
        if (t.kind != TermKind::Exact && t.kind != TermKind::AttributeOnly) return false;
        if (t.attribute.find('*') != std::string::npos) return false;
    }
    return true;
}

}  // namespace

std::array<uint8_t, 32> stored_entry_digest(const Profile& p, BytesView data) {
    Bytes material = p.encode();
    material.insert(material.end(), data.begin(), data.end());
    return sha256(material);
}

struct Store::Impl {
    struct Entry {
        Profile profile;
        uint64_t sfc_index = 0;
        bool simple = false;
        std::vector<uint64_t> axes;  // axis cells, filled when simple
        std::array<uint8_t, 32> digest{};
        uint64_t stored_at = 0;
        NodeId origin{};
        uint64_t log_offset = 0;
        Bytes hot;                              // empty <=> data only in the log
        std::list<std::string>::iterator lru_it;  // valid only while hot
    };

    std::string dir;
    StoreOptions opts;
    std::optional<Queue> log;
    uint64_t compact_baseline = 0;  // log record count at the last compaction

    std::unordered_map<std::string, Entry> by_digest;          // key: raw digest bytes
    std::map<std::string, std::set<std::string>> by_profile;   // profile bytes -> digests
    std::vector<std::map<uint64_t, std::set<std::string>>> axis_index;
    std::set<std::string> complex_keys;  // entries not addressable as one cell
    std::list<std::string> lru;          // front = most recently used
    uint64_t hot_bytes = 0;
    StoreStats st;

    std::string main_log() const { return dir + "/log"; }
    std::string index_file() const { return dir + "/index.tsv"; }

    QueueOptions queue_opts() const {
        QueueOptions q;
        q.segment_bytes = opts.log_segment_bytes;
        return q;
    }

    static std::string key_of(const std::array<uint8_t, 32>& digest) {
        return std::string(digest.begin(), digest.end());
    }

    // --- model maintenance -------------------------------------------------

    void classify(Entry& e) const {
        e.simple = e.profile.simple(opts.space.dims);
        e.axes.clear();
        e.sfc_index = 0;
        if (e.simple) {
            Target t = profile_to_target(e.profile, opts.space);
            e.axes = t.point;
            e.sfc_index = hilbert_encode(e.axes, opts.space.bits);
        }
    }

    void link(const Entry& e, const std::string& key) {
        Bytes pbytes = e.profile.encode();
        by_profile[std::string(pbytes.begin(), pbytes.end())].insert(key);
        if (e.simple)
            for (uint32_t i = 0; i < opts.space.dims; ++i) axis_index[i][e.axes[i]].insert(key);
        else
            complex_keys.insert(key);
    }

    void unlink_and_erase(const std::string& key) {
        auto it = by_digest.find(key);
        if (it == by_digest.end()) return;
        Entry& e = it->second;
        Bytes pbytes = e.profile.encode();
        std::string pkey(pbytes.begin(), pbytes.end());
        auto pit = by_profile.find(pkey);
        if (pit != by_profile.end()) {
            pit->second.erase(key);
            if (pit->second.empty()) by_profile.erase(pit);
        }
        if (e.simple) {
            for (uint32_t i = 0; i < opts.space.dims; ++i) {
                auto ait = axis_index[i].find(e.axes[i]);
                if (ait != axis_index[i].end()) {
                    ait->second.erase(key);
                    if (ait->second.empty()) axis_index[i].erase(ait);
                }
            }
        } else {
            complex_keys.erase(key);
        }
        if (!e.hot.empty()) {
            hot_bytes -= e.hot.size();
            lru.erase(e.lru_it);
        }
        by_digest.erase(it);
    }

    // Returns true when this put collapsed into an existing entry.
    bool apply_put(Profile profile, const std::array<uint8_t, 32>& digest, const NodeId& origin,
                   uint64_t stored_at, uint64_t log_offset) {
        std::string key = key_of(digest);
        auto it = by_digest.find(key);
        if (it != by_digest.end()) {
            it->second.stored_at = stored_at;
            it->second.log_offset = log_offset;  // newest copy, same bytes
            return true;
        }
        Entry e;
        e.profile = std::move(profile);
        e.digest = digest;
        e.stored_at = stored_at;
        e.origin = origin;
        e.log_offset = log_offset;
        classify(e);
        link(e, key);
        by_digest.emplace(std::move(key), std::move(e));
        return false;
    }

    size_t apply_tombstone(const Profile& p) {
        std::vector<std::string> doomed;
        for (const std::string& key : candidate_keys(p, /*count_stats=*/false)) {
            auto it = by_digest.find(key);
            if (it != by_digest.end() && matches(it->second.profile, p)) doomed.push_back(key);
        }
        for (const std::string& key : doomed) unlink_and_erase(key);
        return doomed.size();
    }

    // --- hot tier ----------------------------------------------------------

    void evict_until_fits() {
        while (hot_bytes > opts.hot_capacity_bytes && !lru.empty()) {
            Entry& victim = by_digest.at(lru.back());
            hot_bytes -= victim.hot.size();
            Bytes().swap(victim.hot);
            lru.pop_back();
            ++st.evictions;
        }
    }

    void hot_insert(Entry& e, const std::string& key, Bytes data) {
        if (data.size() > opts.hot_capacity_bytes) return;  // would evict everything
        if (!e.hot.empty()) {
            hot_bytes -= e.hot.size();
            lru.erase(e.lru_it);
        }
        hot_bytes += data.size();
        e.hot = std::move(data);
        lru.push_front(key);
        e.lru_it = lru.begin();
        evict_until_fits();
    }

    void touch(Entry& e) { lru.splice(lru.begin(), lru, e.lru_it); }

    Bytes fetch_data(Entry& e, const std::string& key) {
        if (!e.hot.empty()) {
            ++st.hot_hits;
            touch(e);
            return e.hot;
        }
        ++st.cold_reads;
        auto recs = log->read(e.log_offset, 1);
        if (recs.empty())
            throw Error(Errc::QueueCorrupt, "log record missing for stored entry at offset " +
                                                std::to_string(e.log_offset));
        DecodedRecord rec = decode_record(recs[0].payload);
        hot_insert(e, key, Bytes(rec.data));
        return rec.data;
    }

    // --- queries -----------------------------------------------------------

    // Sound over-approximation of the entries that can match p: intersect,
    // per query term, the set of entries having some axis cell inside the
    // term's interval; entries without a single-cell key are always
    // candidates. More terms than axes -> every entry is a candidate.
    std::vector<std::string> candidate_keys(const Profile& p, bool count_stats) {
        std::vector<std::string> out;
        if (p.terms.empty() || p.terms.size() > opts.space.dims) {
            if (count_stats) ++st.full_scans;
            out.reserve(by_digest.size());
            for (const auto& [key, e] : by_digest) out.push_back(key);
            return out;
        }
        if (count_stats) ++st.narrowed_queries;

        std::vector<std::set<std::string>> per_term;
        for (const Term& t : p.terms) {
            KeywordInterval iv = t.axis_interval(opts.space.bits, opts.space.alphabet);
            std::set<std::string> hits;
            for (uint32_t i = 0; i < opts.space.dims; ++i) {
                for (auto it = axis_index[i].lower_bound(iv.lo);
                     it != axis_index[i].end() && it->first <= iv.hi; ++it)
                    hits.insert(it->second.begin(), it->second.end());
            }
            per_term.push_back(std::move(hits));
        }
        std::sort(per_term.begin(), per_term.end(),
                  [](const auto& a, const auto& b) { return a.size() < b.size(); });
        std::set<std::string> acc = std::move(per_term.front());
        for (size_t i = 1; i < per_term.size() && !acc.empty(); ++i) {
            std::set<std::string> next;
            for (const std::string& k : acc)
                if (per_term[i].count(k)) next.insert(k);
            acc = std::move(next);
        }
        out.assign(acc.begin(), acc.end());
        out.insert(out.end(), complex_keys.begin(), complex_keys.end());
        return out;
    }

    StoredEntry materialize(Entry& e, const std::string& key) {
        StoredEntry out;
        out.key_profile = e.profile;
        out.sfc_index = e.sfc_index;
        out.simple = e.simple;
        out.digest = e.digest;
        out.stored_at = e.stored_at;
        out.origin = e.origin;
        out.data = fetch_data(e, key);
        return out;
    }

    std::vector<StoredEntry> finish(std::vector<std::string> keys) {
        std::sort(keys.begin(), keys.end(), [&](const std::string& a, const std::string& b) {
            const Entry& ea = by_digest.at(a);
            const Entry& eb = by_digest.at(b);
            return std::tie(ea.stored_at, a) < std::tie(eb.stored_at, b);
        });
        std::vector<StoredEntry> out;
        out.reserve(keys.size());
        for (const std::string& k : keys) out.push_back(materialize(by_digest.at(k), k));
        return out;
    }

    // --- compaction ----------------------------------------------------------

    void maybe_compact() {
        uint64_t records = log->head();
        if (records < opts.compact_min_records || records < 2 * std::max<uint64_t>(compact_baseline, 1))
            return;
        if (records == by_digest.size()) {  // nothing to drop yet
            compact_baseline = records;
            return;
        }
        compact();
    }

    // Rewrites live entries (reconstructed from the in-memory state, so the
    // first-writer origin and refreshed timestamp survive) into a fresh log,
    // then swaps directories. A crash between the two renames is healed by
    // Store::open.
    void compact() {
        std::string tmp = main_log() + ".compact";
        std::string old = main_log() + ".old";
        fs::remove_all(tmp);
        fs::remove_all(old);

        std::vector<std::pair<uint64_t, std::string>> order;  // (old offset, key)
        order.reserve(by_digest.size());
        for (const auto& [key, e] : by_digest) order.emplace_back(e.log_offset, key);
        std::sort(order.begin(), order.end());

        {
            Queue fresh = Queue::open(tmp, queue_opts());
            for (auto& [off, key] : order) {
                Entry& e = by_digest.at(key);
                Bytes data = fetch_data(e, key);
                fresh.append(encode_put(e.profile, e.origin, data), e.stored_at);
            }
            fresh.sync();
        }
        log.reset();
        fs::rename(main_log(), old);
        fs::rename(tmp, main_log());
        fs::remove_all(old);
        log.emplace(Queue::open(main_log(), queue_opts()));

        for (uint64_t i = 0; i < order.size(); ++i)
            by_digest.at(order[i].second).log_offset = i;
        compact_baseline = log->head();
        ++st.compactions;
    }

    // --- persistence -------------------------------------------------------

    void replay_log() {
        uint64_t off = 0;
        const uint64_t head = log->head();
        while (off < head) {
            auto batch = log->read(off, 512);
            if (batch.empty()) break;
            for (QueueRecord& rec : batch) {
                DecodedRecord d = decode_record(rec.payload);
                if (d.kind == kRecPut) {
                    auto digest = stored_entry_digest(d.profile, d.data);
                    apply_put(std::move(d.profile), digest, d.origin, rec.timestamp_ms,
                              rec.offset);
                } else {
                    apply_tombstone(d.profile);
                }
                off = rec.offset + 1;
            }
        }
    }

    // The index file is a cache of the replay result, trusted only when the
    // log has not moved since it was written. Any parse problem means "stale".
    bool try_load_index() {
        std::ifstream in(index_file());
        if (!in) return false;
        try {
            std::string line;
            if (!std::getline(in, line)) return false;
            std::istringstream head_line(line);
            std::string magic, version;
            uint64_t head = 0, count = 0;
            head_line >> magic >> version >> head >> count;
            if (magic != "rpstore-index" || version != "v1" || head != log->head()) return false;

            std::vector<std::pair<std::string, Entry>> loaded;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                std::istringstream ls(line);
                std::string digest_hex, origin_hex, profile_hex;
                Entry e;
                if (!(ls >> digest_hex >> e.log_offset >> e.stored_at >> origin_hex >>
                      profile_hex))
                    return false;
                Bytes digest = from_hex(digest_hex);
                if (digest.size() != e.digest.size()) return false;
                std::copy(digest.begin(), digest.end(), e.digest.begin());
                e.origin = NodeId::from_hex(origin_hex);
                e.profile = Profile::decode(BytesView(from_hex(profile_hex)));
                classify(e);
                loaded.emplace_back(key_of(e.digest), std::move(e));
            }
            if (loaded.size() != count) return false;
            for (auto& [key, e] : loaded) {
                link(e, key);
                by_digest.emplace(key, std::move(e));
            }
            return true;
        } catch (const std::exception&) {
            by_digest.clear();
            by_profile.clear();
            for (auto& m : axis_index) m.clear();
            complex_keys.clear();
            return false;
        }
    }

    void write_index() {
        std::string tmp = index_file() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::trunc);
            out << "rpstore-index v1 " << log->head() << ' ' << by_digest.size() << '\n';
            for (const auto& [key, e] : by_digest) {
                Bytes pbytes = e.profile.encode();
                out << hex_encode(BytesView(e.digest.data(), e.digest.size())) << ' '
                    << e.log_offset << ' ' << e.stored_at << ' ' << e.origin.hex() << ' '
                    << hex_encode(pbytes) << '\n';
            }
            out.flush();
            if (!out) throw Error(Errc::StoreFailed, "cannot write store index");
        }
        if (::rename(tmp.c_str(), index_file().c_str()) != 0)
            throw Error(Errc::StoreFailed, "cannot replace store index");
    }
};

Store::Store() : impl_(new Impl) {}
Store::Store(Store&&) noexcept = default;
Store& Store::operator=(Store&&) noexcept = default;

Store::~Store() {
    if (!impl_ || !impl_->log) return;
    try {
        impl_->write_index();
    } catch (...) {
        // Losing the cache is harmless; the log is the source of truth.
    }
}

Store Store::open(const std::string& dir, StoreOptions opts) {
    opts.space.validate();
    if (opts.space.bits % 8 != 0)
        throw Error(Errc::InvalidIndex, "store requires keyword-aligned axis width");

    Store s;
    Impl& im = *s.impl_;
    im.dir = dir;
    im.opts = opts;
    im.axis_index.resize(opts.space.dims);
    fs::create_directories(dir);

    // Heal an interrupted compaction swap. The old directory is only removed
    // after the fresh one is in place, so exactly one complete log exists.
    std::string main = im.main_log(), tmp = main + ".compact", old = main + ".old";
    if (!fs::exists(main) && fs::exists(tmp) && fs::exists(old)) {
        fs::rename(tmp, main);
        fs::remove_all(old);
    } else if (!fs::exists(main) && fs::exists(old)) {
        fs::rename(old, main);
    } else {
        fs::remove_all(tmp);
        fs::remove_all(old);
    }

    im.log.emplace(Queue::open(main, im.queue_opts()));
    if (!im.try_load_index()) im.replay_log();
    fs::remove(im.index_file());  // regenerated on clean close
    im.compact_baseline = im.log->head();
    return s;
}

void Store::put(const Profile& p, BytesView data, const NodeId& origin, uint64_t stored_at_ms) {
    Impl& im = *impl_;
    if (p.terms.empty())
        throw Error(Errc::ProtocolError, "cannot store data under an empty profile");
    if (data.size() > kMaxFieldBytes)
        throw Error(Errc::PayloadTooLarge, "data of " + std::to_string(data.size()) +
                                               " bytes exceeds the " +
                                               std::to_string(kMaxFieldBytes) + "-byte field cap");
    Bytes payload = encode_put(p, origin, data);
    uint64_t offset;
    try {
        offset = im.log->append(payload, stored_at_ms);
    } catch (const Error& e) {
        if (e.code() == Errc::AppendFailed)
            throw Error(Errc::StoreFailed, std::string("log append failed: ") + e.what());
        throw;
    }
    auto digest = stored_entry_digest(p, data);
    bool dup = im.apply_put(p, digest, origin, stored_at_ms, offset);
    ++im.st.puts;
    std::string key = Impl::key_of(digest);
    Impl::Entry& e = im.by_digest.at(key);
    if (dup) {
        ++im.st.dup_puts;
        if (!e.hot.empty())
            im.touch(e);
        else
            im.hot_insert(e, key, Bytes(data.begin(), data.end()));
    } else {
        im.hot_insert(e, key, Bytes(data.begin(), data.end()));
    }
    im.maybe_compact();
}

std::vector<StoredEntry> Store::query_exact(const Profile& p) {
    Impl& im = *impl_;
    if (!all_concrete(p))
        throw Error(Errc::ProtocolError,
                    "exact queries take concrete profiles only, got '" + p.text() + "'");
    Bytes pbytes = p.encode();
    auto it = im.by_profile.find(std::string(pbytes.begin(), pbytes.end()));
    if (it == im.by_profile.end()) return {};
    return im.finish(std::vector<std::string>(it->second.begin(), it->second.end()));
}

std::vector<StoredEntry> Store::query_wildcard(const Profile& p) {
    Impl& im = *impl_;
    std::vector<std::string> hits;
    for (const std::string& key : im.candidate_keys(p, /*count_stats=*/true))
        if (matches(im.by_digest.at(key).profile, p)) hits.push_back(key);
    return im.finish(std::move(hits));
}

std::vector<StoredEntry> Store::query(const Profile& p) {
    return all_concrete(p) && !p.terms.empty() ? query_exact(p) : query_wildcard(p);
}

size_t Store::delete_matching(const Profile& p) {
    Impl& im = *impl_;
    std::vector<std::string> doomed;
    for (const std::string& key : im.candidate_keys(p, /*count_stats=*/false))
        if (matches(im.by_digest.at(key).profile, p)) doomed.push_back(key);
    if (doomed.empty()) return 0;
    try {
        im.log->append(encode_tombstone(p));
    } catch (const Error& e) {
        if (e.code() == Errc::AppendFailed)
            throw Error(Errc::StoreFailed, std::string("log append failed: ") + e.what());
        throw;
    }
    ++im.st.tombstones;
    for (const std::string& key : doomed) im.unlink_and_erase(key);
    im.st.deletes_applied += doomed.size();
    im.maybe_compact();
    return doomed.size();
}

StoreStats Store::stats() const {
    Impl& im = *impl_;
    StoreStats out = im.st;
    out.live_entries = im.by_digest.size();
    out.log_records = im.log->head();
    out.hot_entries = im.lru.size();
    out.hot_bytes = im.hot_bytes;
    return out;
}

void Store::flush_index() { impl_->write_index(); }

}  // namespace rpmesh
