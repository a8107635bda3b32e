#include "rpmesh/wire.hpp"

#include <bit>
#include <cstring>

#include "rpmesh/errors.hpp"

namespace rpmesh {

const char* frame_type_name(FrameType t) {
    switch (t) {
        case FrameType::JOIN: return "JOIN";
        case FrameType::JOIN_ACK: return "JOIN_ACK";
        case FrameType::PING: return "PING";
        case FrameType::PONG: return "PONG";
        case FrameType::LOOKUP: return "LOOKUP";
        case FrameType::LOOKUP_ACK: return "LOOKUP_ACK";
        case FrameType::ELECT_PROBE: return "ELECT_PROBE";
        case FrameType::ELECT_REPLY: return "ELECT_REPLY";
        case FrameType::ELECT_WIN: return "ELECT_WIN";
        case FrameType::SNAPSHOT: return "SNAPSHOT";
        case FrameType::FORWARD: return "FORWARD";
        case FrameType::STORE: return "STORE";
        case FrameType::STORE_ACK: return "STORE_ACK";
        case FrameType::PUSH: return "PUSH";
        case FrameType::PULL: return "PULL";
    }
    return "?";
}

Bytes encode_frame(FrameType type, BytesView payload, const SpaceConfig& cfg) {
    if (payload.size() > kMaxFramePayload)
        throw Error(Errc::PayloadTooLarge,
                    "frame payload " + std::to_string(payload.size()) + " bytes");
    Bytes out;
    out.reserve(kFrameHeaderBytes + payload.size());
    for (char c : kWireMagic) out.push_back(uint8_t(c));
    put_u8(out, kWireVersion);
    auto digest = cfg.handshake_digest();
    out.insert(out.end(), digest.begin(), digest.end());
    put_u8(out, uint8_t(type));
    put_u32(out, uint32_t(payload.size()));
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

FrameHeader decode_frame_header(BytesView header, const SpaceConfig& cfg) {
    if (header.size() < kFrameHeaderBytes)
        throw Error(Errc::ProtocolError, "short frame header");
    ByteReader r(header.first(kFrameHeaderBytes));
    auto magic = r.take(4);
    if (!std::equal(magic.begin(), magic.end(), kWireMagic.begin()))
        throw Error(Errc::ProtocolError, "bad frame magic");
    uint8_t version = r.u8();
    if (version != kWireVersion)
        throw Error(Errc::IncompatibleNetwork,
                    "wire version " + std::to_string(version) + ", expected " +
                        std::to_string(kWireVersion));
    auto digest = r.take(8);
    auto expected = cfg.handshake_digest();
    if (!std::equal(digest.begin(), digest.end(), expected.begin()))
        throw Error(Errc::IncompatibleNetwork, "space-constants digest mismatch");
    uint8_t type = r.u8();
    if (type < uint8_t(FrameType::JOIN) || type > uint8_t(FrameType::PULL))
        throw Error(Errc::ProtocolError, "unknown frame type " + std::to_string(type));
    uint32_t len = r.u32();
    if (len > kMaxFramePayload) throw Error(Errc::ProtocolError, "frame payload too long");
    return FrameHeader{FrameType(type), len};
}

Frame decode_frame(BytesView bytes, const SpaceConfig& cfg) {
    FrameHeader h = decode_frame_header(bytes, cfg);
    if (bytes.size() != kFrameHeaderBytes + h.payload_len)
        throw Error(Errc::ProtocolError, "frame length mismatch");
    Frame f;
    f.type = h.type;
    f.payload.assign(bytes.begin() + kFrameHeaderBytes, bytes.end());
    return f;
}

// ---- TLV ----

void TlvWriter::put(uint8_t tag, BytesView value) {
    if (value.size() > kMaxFieldBytes)
        throw Error(Errc::PayloadTooLarge, "field " + std::to_string(tag) + " too long");
    rpmesh::put_u8(out_, tag);
    rpmesh::put_u16(out_, uint16_t(value.size()));
    out_.insert(out_.end(), value.begin(), value.end());
}

void TlvWriter::put_str(uint8_t tag, std::string_view s) {
    put(tag, BytesView(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
}

void TlvWriter::put_u8(uint8_t tag, uint8_t v) { put(tag, BytesView(&v, 1)); }

void TlvWriter::put_u32(uint8_t tag, uint32_t v) {
    Bytes b;
    rpmesh::put_u32(b, v);
    put(tag, b);
}

void TlvWriter::put_u64(uint8_t tag, uint64_t v) {
    Bytes b;
    rpmesh::put_u64(b, v);
    put(tag, b);
}

void TlvWriter::put_f64(uint8_t tag, double v) { put_u64(tag, std::bit_cast<uint64_t>(v)); }

void TlvWriter::put_id(uint8_t tag, const NodeId& id) {
    put(tag, BytesView(id.bytes.data(), id.bytes.size()));
}

std::optional<TlvReader::Field> TlvReader::next() {
    if (pos_ == bytes_.size()) return std::nullopt;
    if (bytes_.size() - pos_ < 3) throw Error(Errc::ProtocolError, "truncated field header");
    uint8_t tag = bytes_[pos_];
    uint16_t len = uint16_t(bytes_[pos_ + 1]) << 8 | bytes_[pos_ + 2];
    pos_ += 3;
    if (bytes_.size() - pos_ < len) throw Error(Errc::ProtocolError, "truncated field value");
    Field f{tag, bytes_.subspan(pos_, len)};
    pos_ += len;
    return f;
}

uint8_t TlvReader::as_u8(BytesView v) {
    if (v.size() != 1) throw Error(Errc::ProtocolError, "bad u8 field");
    return v[0];
}

uint32_t TlvReader::as_u32(BytesView v) {
    if (v.size() != 4) throw Error(Errc::ProtocolError, "bad u32 field");
    ByteReader r(v);
    return r.u32();
}

uint64_t TlvReader::as_u64(BytesView v) {
    if (v.size() != 8) throw Error(Errc::ProtocolError, "bad u64 field");
    ByteReader r(v);
    return r.u64();
}

double TlvReader::as_f64(BytesView v) { return std::bit_cast<double>(as_u64(v)); }

NodeId TlvReader::as_id(BytesView v) {
    if (v.size() != 20) throw Error(Errc::ProtocolError, "bad id field");
    NodeId id;
    std::memcpy(id.bytes.data(), v.data(), 20);
    return id;
}

std::string TlvReader::as_str(BytesView v) { return to_string(v); }

// ---- Compound codecs ----

namespace {
constexpr uint8_t kTagId = 1, kTagEndpoint = 2, kTagLat = 3, kTagLon = 4;
}

Bytes encode_member(const Member& m) {
    TlvWriter w;
    w.put_id(kTagId, m.id);
    w.put_str(kTagEndpoint, m.endpoint);
    w.put_f64(kTagLat, m.geo.lat);
    w.put_f64(kTagLon, m.geo.lon);
    return w.take();
}

Member decode_member(BytesView bytes) {
    Member m;
    TlvReader r(bytes);
    while (auto f = r.next()) {
        switch (f->tag) {
            case kTagId: m.id = TlvReader::as_id(f->value); break;
            case kTagEndpoint: m.endpoint = TlvReader::as_str(f->value); break;
            case kTagLat: m.geo.lat = TlvReader::as_f64(f->value); break;
            case kTagLon: m.geo.lon = TlvReader::as_f64(f->value); break;
            default: break;
        }
    }
    return m;
}

namespace {

Bytes encode_box(const LatLonBox& b) {
    Bytes out;
    put_u64(out, std::bit_cast<uint64_t>(b.lat_lo));
    put_u64(out, std::bit_cast<uint64_t>(b.lat_hi));
    put_u64(out, std::bit_cast<uint64_t>(b.lon_lo));
    put_u64(out, std::bit_cast<uint64_t>(b.lon_hi));
    return out;
}

LatLonBox decode_box(BytesView v) {
    if (v.size() != 32) throw Error(Errc::ProtocolError, "bad box field");
    ByteReader r(v);
    LatLonBox b;
    b.lat_lo = std::bit_cast<double>(r.u64());
    b.lat_hi = std::bit_cast<double>(r.u64());
    b.lon_lo = std::bit_cast<double>(r.u64());
    b.lon_hi = std::bit_cast<double>(r.u64());
    return b;
}

}  // namespace

Bytes encode_region_meta(const RegionMeta& m) {
    TlvWriter w;
    w.put_str(1, m.path);
    w.put(2, encode_box(m.box));
    w.put_u8(3, m.leaf ? 1 : 0);
    w.put_id(4, m.master);
    w.put_str(5, m.master_endpoint);
    w.put_u32(6, m.ring_size);
    return w.take();
}

RegionMeta decode_region_meta(BytesView bytes) {
    RegionMeta m;
    TlvReader r(bytes);
    while (auto f = r.next()) {
        switch (f->tag) {
            case 1: m.path = TlvReader::as_str(f->value); break;
            case 2: m.box = decode_box(f->value); break;
            case 3: m.leaf = TlvReader::as_u8(f->value) != 0; break;
            case 4: m.master = TlvReader::as_id(f->value); break;
            case 5: m.master_endpoint = TlvReader::as_str(f->value); break;
            case 6: m.ring_size = TlvReader::as_u32(f->value); break;
            default: break;
        }
    }
    return m;
}

Bytes encode_snapshot(const QuadTreeSnapshot& s) {
    TlvWriter w;
    w.put_u64(1, s.version);
    for (const auto& [path, meta] : s.regions) w.put(2, encode_region_meta(meta));
    return w.take();
}

QuadTreeSnapshot decode_snapshot(BytesView bytes) {
    QuadTreeSnapshot s;
    TlvReader r(bytes);
    while (auto f = r.next()) {
        if (f->tag == 1) s.version = TlvReader::as_u64(f->value);
        else if (f->tag == 2) {
            RegionMeta m = decode_region_meta(f->value);
            s.regions[m.path] = std::move(m);
        }
    }
    return s;
}

// ---- Frame payloads ----
//
// Tag 1 is always the sending/primary member; payload-specific fields start
// at tag 3.

Bytes JoinPayload::encode() const {
    TlvWriter w;
    w.put(1, encode_member(sender));
    return w.take();
}

JoinPayload JoinPayload::decode(BytesView bytes) {
    JoinPayload p;
    TlvReader r(bytes);
    while (auto f = r.next())
        if (f->tag == 1) p.sender = decode_member(f->value);
    return p;
}

Bytes JoinAckPayload::encode() const {
    TlvWriter w;
    w.put(1, encode_member(sender));
    w.put_u8(3, status);
    w.put_str(4, region.path);
    w.put(5, encode_box(region.box));
    w.put_id(6, region.master);
    for (const Member& m : region.ring) w.put(7, encode_member(m));
    w.put(8, encode_snapshot(snapshot));
    return w.take();
}

JoinAckPayload JoinAckPayload::decode(BytesView bytes) {
    JoinAckPayload p;
    TlvReader r(bytes);
    while (auto f = r.next()) {
        switch (f->tag) {
            case 1: p.sender = decode_member(f->value); break;
            case 3: p.status = TlvReader::as_u8(f->value); break;
            case 4: p.region.path = TlvReader::as_str(f->value); break;
            case 5: p.region.box = decode_box(f->value); break;
            case 6: p.region.master = TlvReader::as_id(f->value); break;
            case 7: p.region.ring.push_back(decode_member(f->value)); break;
            case 8: p.snapshot = decode_snapshot(f->value); break;
            default: break;
        }
    }
    return p;
}

Bytes PingPayload::encode() const {
    TlvWriter w;
    w.put(1, encode_member(sender));
    w.put_str(3, path);
    return w.take();
}

PingPayload PingPayload::decode(BytesView bytes) {
    PingPayload p;
    TlvReader r(bytes);
    while (auto f = r.next()) {
        if (f->tag == 1) p.sender = decode_member(f->value);
        else if (f->tag == 3) p.path = TlvReader::as_str(f->value);
    }
    return p;
}

Bytes PongPayload::encode() const {
    TlvWriter w;
    w.put(1, encode_member(sender));
    w.put_str(3, path);
    w.put_u64(4, snapshot_version);
    return w.take();
}

PongPayload PongPayload::decode(BytesView bytes) {
    PongPayload p;
    TlvReader r(bytes);
    while (auto f = r.next()) {
        if (f->tag == 1) p.sender = decode_member(f->value);
        else if (f->tag == 3) p.path = TlvReader::as_str(f->value);
        else if (f->tag == 4) p.snapshot_version = TlvReader::as_u64(f->value);
    }
    return p;
}

Bytes LookupPayload::encode() const {
    TlvWriter w;
    w.put(1, encode_member(sender));
    w.put_u64(3, lookup_id);
    w.put_id(4, target);
    w.put_u8(5, want);
    return w.take();
}

LookupPayload LookupPayload::decode(BytesView bytes) {
    LookupPayload p;
    TlvReader r(bytes);
    while (auto f = r.next()) {
        switch (f->tag) {
            case 1: p.sender = decode_member(f->value); break;
            case 3: p.lookup_id = TlvReader::as_u64(f->value); break;
            case 4: p.target = TlvReader::as_id(f->value); break;
            case 5: p.want = TlvReader::as_u8(f->value); break;
            default: break;
        }
    }
    return p;
}

Bytes LookupAckPayload::encode() const {
    TlvWriter w;
    w.put(1, encode_member(sender));
    w.put_u64(3, lookup_id);
    for (const Member& m : contacts) w.put(4, encode_member(m));
    return w.take();
}

LookupAckPayload LookupAckPayload::decode(BytesView bytes) {
    LookupAckPayload p;
    TlvReader r(bytes);
    while (auto f = r.next()) {
        switch (f->tag) {
            case 1: p.sender = decode_member(f->value); break;
            case 3: p.lookup_id = TlvReader::as_u64(f->value); break;
            case 4: p.contacts.push_back(decode_member(f->value)); break;
            default: break;
        }
    }
    return p;
}

Bytes ElectProbePayload::encode() const {
    TlvWriter w;
    w.put(1, encode_member(candidate));
    w.put_str(3, path);
    w.put_u64(4, epoch);
    w.put_u32(5, phase);
    w.put_u64(6, hops_left);
    w.put_u8(7, dir);
    return w.take();
}

ElectProbePayload ElectProbePayload::decode(BytesView bytes) {
    ElectProbePayload p;
    TlvReader r(bytes);
    while (auto f = r.next()) {
        switch (f->tag) {
            case 1: p.candidate = decode_member(f->value); break;
            case 3: p.path = TlvReader::as_str(f->value); break;
            case 4: p.epoch = TlvReader::as_u64(f->value); break;
            case 5: p.phase = TlvReader::as_u32(f->value); break;
            case 6: p.hops_left = TlvReader::as_u64(f->value); break;
            case 7: p.dir = TlvReader::as_u8(f->value); break;
            default: break;
        }
    }
    return p;
}

Bytes ElectReplyPayload::encode() const {
    TlvWriter w;
    w.put(1, encode_member(sender));
    w.put_str(3, path);
    w.put_u64(4, epoch);
    w.put_id(5, candidate);
    w.put_u32(6, phase);
    w.put_u8(7, dir);
    return w.take();
}

ElectReplyPayload ElectReplyPayload::decode(BytesView bytes) {
    ElectReplyPayload p;
    TlvReader r(bytes);
    while (auto f = r.next()) {
        switch (f->tag) {
            case 1: p.sender = decode_member(f->value); break;
            case 3: p.path = TlvReader::as_str(f->value); break;
            case 4: p.epoch = TlvReader::as_u64(f->value); break;
            case 5: p.candidate = TlvReader::as_id(f->value); break;
            case 6: p.phase = TlvReader::as_u32(f->value); break;
            case 7: p.dir = TlvReader::as_u8(f->value); break;
            default: break;
        }
    }
    return p;
}

Bytes ElectWinPayload::encode() const {
    TlvWriter w;
    w.put(1, encode_member(winner));
    w.put_str(3, path);
    w.put_u64(4, epoch);
    for (const Member& m : ring) w.put(5, encode_member(m));
    w.put(6, encode_snapshot(snapshot));
    return w.take();
}

ElectWinPayload ElectWinPayload::decode(BytesView bytes) {
    ElectWinPayload p;
    TlvReader r(bytes);
    while (auto f = r.next()) {
        switch (f->tag) {
            case 1: p.winner = decode_member(f->value); break;
            case 3: p.path = TlvReader::as_str(f->value); break;
            case 4: p.epoch = TlvReader::as_u64(f->value); break;
            case 5: p.ring.push_back(decode_member(f->value)); break;
            case 6: p.snapshot = decode_snapshot(f->value); break;
            default: break;
        }
    }
    return p;
}

Bytes SnapshotPayload::encode() const {
    TlvWriter w;
    w.put(1, encode_member(sender));
    w.put(3, encode_snapshot(snapshot));
    w.put_str(4, ring_path);
    for (const Member& m : ring) w.put(5, encode_member(m));
    return w.take();
}

SnapshotPayload SnapshotPayload::decode(BytesView bytes) {
    SnapshotPayload p;  // ring_path stays "-" (= no membership refresh) if absent
    TlvReader r(bytes);
    while (auto f = r.next()) {
        switch (f->tag) {
            case 1: p.sender = decode_member(f->value); break;
            case 3: p.snapshot = decode_snapshot(f->value); break;
            case 4: p.ring_path = TlvReader::as_str(f->value); break;
            case 5: p.ring.push_back(decode_member(f->value)); break;
            default: break;
        }
    }
    return p;
}

Bytes ForwardPayload::encode() const {
    TlvWriter w;
    w.put(1, encode_member(sender));
    w.put_str(3, dest_path);
    w.put_u8(4, hops_left);
    if (inner.size() > kMaxFieldBytes)
        throw Error(Errc::PayloadTooLarge, "forwarded frame too long for a field");
    w.put(5, inner);
    return w.take();
}

ForwardPayload ForwardPayload::decode(BytesView bytes) {
    ForwardPayload p;
    TlvReader r(bytes);
    while (auto f = r.next()) {
        switch (f->tag) {
            case 1: p.sender = decode_member(f->value); break;
            case 3: p.dest_path = TlvReader::as_str(f->value); break;
            case 4: p.hops_left = TlvReader::as_u8(f->value); break;
            case 5: p.inner.assign(f->value.begin(), f->value.end()); break;
            default: break;
        }
    }
    return p;
}

Bytes DeliverPayload::encode() const {
    TlvWriter w;
    w.put(1, encode_member(sender));
    w.put_u64(3, req_id);
    w.put_u8(4, uint8_t(kind));
    w.put(5, msg.encode());
    w.put_str(6, aux);
    return w.take();
}

DeliverPayload DeliverPayload::decode(BytesView bytes) {
    DeliverPayload p;
    TlvReader r(bytes);
    while (auto f = r.next()) {
        switch (f->tag) {
            case 1: p.sender = decode_member(f->value); break;
            case 3: p.req_id = TlvReader::as_u64(f->value); break;
            case 4: p.kind = DeliverKind(TlvReader::as_u8(f->value)); break;
            case 5: p.msg = ARMessage::decode(f->value); break;
            case 6: p.aux = TlvReader::as_str(f->value); break;
            default: break;
        }
    }
    return p;
}

Bytes AckPayload::encode() const {
    TlvWriter w;
    w.put(1, encode_member(sender));
    w.put_u64(3, req_id);
    w.put_u8(4, status);
    w.put_u32(5, count);
    w.put_str(6, info);
    return w.take();
}

AckPayload AckPayload::decode(BytesView bytes) {
    AckPayload p;
    TlvReader r(bytes);
    while (auto f = r.next()) {
        switch (f->tag) {
            case 1: p.sender = decode_member(f->value); break;
            case 3: p.req_id = TlvReader::as_u64(f->value); break;
            case 4: p.status = TlvReader::as_u8(f->value); break;
            case 5: p.count = TlvReader::as_u32(f->value); break;
            case 6: p.info = TlvReader::as_str(f->value); break;
            default: break;
        }
    }
    return p;
}

Bytes PushPayload::encode() const {
    TlvWriter w;
    w.put(1, encode_member(sender));
    w.put_u64(3, req_id);
    w.put_u8(4, uint8_t(kind));
    w.put_str(5, stream);
    w.put_u64(6, first_seq);
    for (const Bytes& rec : records) w.put(7, rec);
    w.put_u64(8, next_offset);
    return w.take();
}

PushPayload PushPayload::decode(BytesView bytes) {
    PushPayload p;
    TlvReader r(bytes);
    while (auto f = r.next()) {
        switch (f->tag) {
            case 1: p.sender = decode_member(f->value); break;
            case 3: p.req_id = TlvReader::as_u64(f->value); break;
            case 4: p.kind = PushKind(TlvReader::as_u8(f->value)); break;
            case 5: p.stream = TlvReader::as_str(f->value); break;
            case 6: p.first_seq = TlvReader::as_u64(f->value); break;
            case 7: p.records.emplace_back(f->value.begin(), f->value.end()); break;
            case 8: p.next_offset = TlvReader::as_u64(f->value); break;
            default: break;
        }
    }
    return p;
}

Bytes PullPayload::encode() const {
    TlvWriter w;
    w.put(1, encode_member(sender));
    w.put_u64(3, req_id);
    w.put_u8(4, uint8_t(kind));
    w.put_str(5, consumer);
    w.put_str(6, stream);
    w.put_u64(7, from_offset);
    w.put_u32(8, max_records);
    return w.take();
}

PullPayload PullPayload::decode(BytesView bytes) {
    PullPayload p;
    TlvReader r(bytes);
    while (auto f = r.next()) {
        switch (f->tag) {
            case 1: p.sender = decode_member(f->value); break;
            case 3: p.req_id = TlvReader::as_u64(f->value); break;
            case 4: p.kind = PullKind(TlvReader::as_u8(f->value)); break;
            case 5: p.consumer = TlvReader::as_str(f->value); break;
            case 6: p.stream = TlvReader::as_str(f->value); break;
            case 7: p.from_offset = TlvReader::as_u64(f->value); break;
            case 8: p.max_records = TlvReader::as_u32(f->value); break;
            default: break;
        }
    }
    return p;
}

}  // namespace rpmesh
