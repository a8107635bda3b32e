#pragma once

// Network-wide constants. Every node in a deployment must compute identical
// keyword coordinates and curve indices, so (d, b, alphabet, curve tag) are
// fixed per network, echoed in every wire handshake as an 8-byte digest, and
// a mismatch aborts the connection.

#include <array>
#include <cstdint>
#include <string>

#include "rpmesh/bytes.hpp"

namespace rpmesh {

// Rank 0 is the pad; real characters rank from 1. Case-folded before lookup.
inline constexpr std::string_view kKeywordAlphabet = "abcdefghijklmnopqrstuvwxyz0123456789.-:";

// Identifies the frozen curve orientation (see tests/golden/).
inline constexpr std::string_view kCurveTag = "hil-v1";

inline constexpr uint8_t kWireVersion = 1;
inline constexpr std::array<uint8_t, 4> kWireMagic = {'R', 'P', 'L', 'S'};

// A single TLV field is length-prefixed with a u16, which caps any one wire
// field (and therefore AR message data) at 65535 bytes.
inline constexpr size_t kMaxFieldBytes = 65535;

struct SpaceConfig {
    uint32_t dims = 3;       // d: keyword-space dimensions
    uint32_t bits = 16;      // b: curve order per dimension
    std::string alphabet = std::string(kKeywordAlphabet);
    std::string curve_tag = std::string(kCurveTag);

    bool operator==(const SpaceConfig&) const = default;

    // d*b must fit a u64 index; b must be a whole number of 8-bit characters.
    void validate() const;

    uint32_t index_bits() const { return dims * bits; }
    uint64_t axis_cells() const { return uint64_t(1) << bits; }
    uint64_t total_cells() const {
        return index_bits() >= 64 ? ~uint64_t(0) : (uint64_t(1) << index_bits());
    }

    // 8-byte digest over d|b|curve|alphabet carried in every frame header.
    std::array<uint8_t, 8> handshake_digest() const;
};

}  // namespace rpmesh
