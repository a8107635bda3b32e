#pragma once

// Hashing primitives: 160-bit node identifiers, 256-bit content digests,
// CRC32 for queue record framing.

#include <array>
#include <compare>
#include <cstdint>
#include <string>

#include "rpmesh/bytes.hpp"

namespace rpmesh {

// 160-bit identifier on the DHT ring. Byte 0 is the most significant.
struct NodeId {
    std::array<uint8_t, 20> bytes{};

    auto operator<=>(const NodeId&) const = default;

    bool is_zero() const {
        for (uint8_t b : bytes)
            if (b) return false;
        return true;
    }

    std::string hex() const;
    std::string short_hex() const;  // first 6 hex digits, for logs

    static NodeId from_hex(const std::string& s);
};

// XOR distance, kept as raw bytes; compare lexicographically.
NodeId xor_distance(const NodeId& a, const NodeId& b);

// True if |a - target| < |b - target| in the XOR metric.
bool xor_closer(const NodeId& a, const NodeId& b, const NodeId& target);

using Digest256 = std::array<uint8_t, 32>;

NodeId sha1_160(BytesView data);
Digest256 sha256(BytesView data);
std::string sha256_hex(BytesView data);

// Node identity is the digest of (endpoint, salt); salt is regenerated on
// id collision.
NodeId derive_node_id(const std::string& endpoint, uint64_t salt);

uint32_t crc32(BytesView data);

}  // namespace rpmesh
