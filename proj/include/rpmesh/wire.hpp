#pragma once

// Binary wire framing shared by the TCP daemon and the in-process simulator.
//
// Frame layout:
//   magic "RPLS" (4) | version u8 | constants digest (8) | type u8 |
//   payload length u32 BE | payload
//
// The 8-byte digest pins (dims, bits, curve orientation, alphabet); a
// mismatch means the peer computes different coordinates for the same
// keywords and the connection must be refused (IncompatibleNetwork).
//
// Payloads are flat tag-length-value fields (tag u8, length u16 BE, bytes);
// compound values (members, region metadata) nest the same scheme inside a
// field. Unknown tags are skipped, so payloads can grow compatibly.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rpmesh/ar_message.hpp"
#include "rpmesh/bytes.hpp"
#include "rpmesh/constants.hpp"
#include "rpmesh/overlay.hpp"

namespace rpmesh {

enum class FrameType : uint8_t {
    JOIN = 1,
    JOIN_ACK = 2,
    PING = 3,
    PONG = 4,
    LOOKUP = 5,
    LOOKUP_ACK = 6,
    ELECT_PROBE = 7,
    ELECT_REPLY = 8,
    ELECT_WIN = 9,
    SNAPSHOT = 10,
    FORWARD = 11,
    STORE = 12,
    STORE_ACK = 13,
    PUSH = 14,
    PULL = 15,
};

const char* frame_type_name(FrameType t);

inline constexpr size_t kFrameHeaderBytes = 18;
inline constexpr size_t kMaxFramePayload = 1 << 20;

struct Frame {
    FrameType type = FrameType::PING;
    Bytes payload;
};

Bytes encode_frame(FrameType type, BytesView payload, const SpaceConfig& cfg);

// Header alone (first kFrameHeaderBytes). Validates magic, version, digest
// (IncompatibleNetwork on constants mismatch), type, and length bound.
struct FrameHeader {
    FrameType type;
    uint32_t payload_len;
};
FrameHeader decode_frame_header(BytesView header, const SpaceConfig& cfg);

// Whole frame (header + payload, exact length).
Frame decode_frame(BytesView bytes, const SpaceConfig& cfg);

// ---- TLV helpers ----

class TlvWriter {
  public:
    void put(uint8_t tag, BytesView value);
    void put_str(uint8_t tag, std::string_view s);
    void put_u8(uint8_t tag, uint8_t v);
    void put_u32(uint8_t tag, uint32_t v);
    void put_u64(uint8_t tag, uint64_t v);
    void put_f64(uint8_t tag, double v);
    void put_id(uint8_t tag, const NodeId& id);

    Bytes take() { return std::move(out_); }

  private:
    Bytes out_;
};

class TlvReader {
  public:
    explicit TlvReader(BytesView bytes) : bytes_(bytes) {}

    // Next field, or nullopt at end. Throws ProtocolError on truncation.
    struct Field {
        uint8_t tag;
        BytesView value;
    };
    std::optional<Field> next();

    static uint8_t as_u8(BytesView v);
    static uint32_t as_u32(BytesView v);
    static uint64_t as_u64(BytesView v);
    static double as_f64(BytesView v);
    static NodeId as_id(BytesView v);
    static std::string as_str(BytesView v);

  private:
    BytesView bytes_;
    size_t pos_ = 0;
};

// ---- Compound field codecs ----

Bytes encode_member(const Member& m);
Member decode_member(BytesView bytes);

Bytes encode_region_meta(const RegionMeta& m);
RegionMeta decode_region_meta(BytesView bytes);

Bytes encode_snapshot(const QuadTreeSnapshot& s);
QuadTreeSnapshot decode_snapshot(BytesView bytes);

// ---- Frame payloads ----

struct JoinPayload {
    Member sender;

    Bytes encode() const;
    static JoinPayload decode(BytesView bytes);
};

struct JoinAckPayload {
    Member sender;
    uint8_t status = 0;  // 0 accepted, 1 id collision (rejoin with new salt)
    Region region;       // path, box, ring, master (valid when status == 0)
    QuadTreeSnapshot snapshot;

    Bytes encode() const;
    static JoinAckPayload decode(BytesView bytes);
};

struct PingPayload {
    Member sender;
    std::string path;

    Bytes encode() const;
    static PingPayload decode(BytesView bytes);
};

struct PongPayload {
    Member sender;
    std::string path;
    uint64_t snapshot_version = 0;

    Bytes encode() const;
    static PongPayload decode(BytesView bytes);
};

struct LookupPayload {
    Member sender;
    uint64_t lookup_id = 0;
    NodeId target{};
    uint8_t want = 3;

    Bytes encode() const;
    static LookupPayload decode(BytesView bytes);
};

struct LookupAckPayload {
    Member sender;
    uint64_t lookup_id = 0;
    std::vector<Member> contacts;

    Bytes encode() const;
    static LookupAckPayload decode(BytesView bytes);
};

struct ElectProbePayload {
    Member candidate;
    std::string path;
    uint64_t epoch = 0;
    uint32_t phase = 0;
    uint64_t hops_left = 0;
    uint8_t dir = 0;  // 0 = toward left neighbours, 1 = toward right

    Bytes encode() const;
    static ElectProbePayload decode(BytesView bytes);
};

struct ElectReplyPayload {
    Member sender;
    std::string path;
    uint64_t epoch = 0;
    NodeId candidate{};
    uint32_t phase = 0;
    uint8_t dir = 0;

    Bytes encode() const;
    static ElectReplyPayload decode(BytesView bytes);
};

struct ElectWinPayload {
    Member winner;
    std::string path;
    uint64_t epoch = 0;
    std::vector<Member> ring;
    QuadTreeSnapshot snapshot;

    Bytes encode() const;
    static ElectWinPayload decode(BytesView bytes);
};

struct SnapshotPayload {
    Member sender;
    QuadTreeSnapshot snapshot;
    // "-" = tree-only frame. Any other value (including "", the root) means
    // this frame also refreshes the full membership of that region's ring.
    std::string ring_path = "-";
    std::vector<Member> ring;

    bool has_ring() const { return ring_path != "-"; }

    Bytes encode() const;
    static SnapshotPayload decode(BytesView bytes);
};

struct ForwardPayload {
    Member sender;
    std::string dest_path;
    uint8_t hops_left = 8;
    Bytes inner;  // complete frame, re-decoded at the destination master

    Bytes encode() const;
    static ForwardPayload decode(BytesView bytes);
};

// STORE frames deliver an AR message for execution; the same frame carries
// rendezvous notices back to interested parties and client submissions to
// the local daemon.
enum class DeliverKind : uint8_t {
    Execute = 1,      // run execute_action at this rendezvous point
    Notice = 2,       // rendezvous notification to a producer/consumer
    ClientPost = 3,   // client asks the receiving node to post on its behalf
};

struct DeliverPayload {
    Member sender;
    uint64_t req_id = 0;
    DeliverKind kind = DeliverKind::Execute;
    ARMessage msg;
    std::string aux;  // Notice: counterpart endpoint; else unused

    Bytes encode() const;
    static DeliverPayload decode(BytesView bytes);
};

struct AckPayload {
    Member sender;
    uint64_t req_id = 0;
    uint8_t status = 0;  // 0 ok, nonzero failure class
    uint32_t count = 0;
    std::string info;

    Bytes encode() const;
    static AckPayload decode(BytesView bytes);
};

enum class PushKind : uint8_t {
    StreamAppend = 1,  // producer -> collector: append records to the queue
    PullReply = 2,     // response to a PULL
};

struct PushPayload {
    Member sender;
    uint64_t req_id = 0;
    PushKind kind = PushKind::StreamAppend;
    std::string stream;
    uint64_t first_seq = 0;  // StreamAppend: sequence of records[0] in the session
                             // PullReply: queue offset of records[0]
    std::vector<Bytes> records;
    uint64_t next_offset = 0;  // PullReply: next offset to pull from

    Bytes encode() const;
    static PushPayload decode(BytesView bytes);
};

enum class PullKind : uint8_t {
    Queue = 1,  // read the peer's collection queue at an offset
    Query = 2,  // fetch stored entries matching a profile
};

struct PullPayload {
    Member sender;
    uint64_t req_id = 0;
    PullKind kind = PullKind::Queue;
    std::string consumer;
    std::string stream;  // Queue: stream filter ("" = all); Query: profile text
    uint64_t from_offset = 0;
    uint32_t max_records = 256;

    Bytes encode() const;
    static PullPayload decode(BytesView bytes);
};

}  // namespace rpmesh
