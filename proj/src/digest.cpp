#include "rpmesh/digest.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <stdexcept>

#include "rpmesh/errors.hpp"

namespace rpmesh {

const char* errc_name(Errc c) {
    switch (c) {
        case Errc::InvalidKeyword: return "InvalidKeyword";
        case Errc::InvalidIndex: return "InvalidIndex";
        case Errc::ProfileTooWide: return "ProfileTooWide";
        case Errc::IncompatibleNetwork: return "IncompatibleNetwork";
        case Errc::LookupFailed: return "LookupFailed";
        case Errc::ReplicationDegraded: return "ReplicationDegraded";
        case Errc::PostFailed: return "PostFailed";
        case Errc::PayloadTooLarge: return "PayloadTooLarge";
        case Errc::AppendFailed: return "AppendFailed";
        case Errc::OffsetTrimmed: return "OffsetTrimmed";
        case Errc::QueueCorrupt: return "QueueCorrupt";
        case Errc::StoreFailed: return "StoreFailed";
        case Errc::ParseError: return "ParseError";
        case Errc::EvalError: return "EvalError";
        case Errc::ProtocolError: return "ProtocolError";
        case Errc::FunctionStartFailed: return "FunctionStartFailed";
        case Errc::StreamBroken: return "StreamBroken";
        case Errc::ScenarioError: return "ScenarioError";
    }
    return "Unknown";
}

namespace {

constexpr char kHexDigits[] = "0123456789abcdef";

void evp_digest(const EVP_MD* md, BytesView data, uint8_t* out, unsigned out_len) {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw std::runtime_error("EVP_MD_CTX_new failed");
    unsigned got = 0;
    int ok = EVP_DigestInit_ex(ctx, md, nullptr) &&
             EVP_DigestUpdate(ctx, data.data(), data.size()) &&
             EVP_DigestFinal_ex(ctx, out, &got);
    EVP_MD_CTX_free(ctx);
    if (!ok || got != out_len) throw std::runtime_error("digest computation failed");
}

}  // namespace

std::string hex_encode(BytesView b) {
    std::string out;
    out.reserve(b.size() * 2);
    for (uint8_t v : b) {
        out.push_back(kHexDigits[v >> 4]);
        out.push_back(kHexDigits[v & 0xf]);
    }
    return out;
}

std::string NodeId::hex() const { return hex_encode(bytes); }

std::string NodeId::short_hex() const { return hex().substr(0, 6); }

NodeId NodeId::from_hex(const std::string& s) {
    if (s.size() != 40) throw Error(Errc::ParseError, "node id must be 40 hex digits");
    NodeId id;
    auto nib = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw Error(Errc::ParseError, "bad hex digit in node id");
    };
    for (size_t i = 0; i < 20; ++i)
        id.bytes[i] = static_cast<uint8_t>(nib(s[2 * i]) << 4 | nib(s[2 * i + 1]));
    return id;
}

NodeId xor_distance(const NodeId& a, const NodeId& b) {
    NodeId d;
    for (size_t i = 0; i < 20; ++i) d.bytes[i] = a.bytes[i] ^ b.bytes[i];
    return d;
}

bool xor_closer(const NodeId& a, const NodeId& b, const NodeId& target) {
    for (size_t i = 0; i < 20; ++i) {
        uint8_t da = a.bytes[i] ^ target.bytes[i];
        uint8_t db = b.bytes[i] ^ target.bytes[i];
        if (da != db) return da < db;
    }
    return false;
}

NodeId sha1_160(BytesView data) {
    NodeId id;
    evp_digest(EVP_sha1(), data, id.bytes.data(), 20);
    return id;
}

Digest256 sha256(BytesView data) {
    Digest256 d;
    evp_digest(EVP_sha256(), data, d.data(), 32);
    return d;
}

std::string sha256_hex(BytesView data) {
    auto d = sha256(data);
    return hex_encode(d);
}

NodeId derive_node_id(const std::string& endpoint, uint64_t salt) {
    Bytes buf = to_bytes(endpoint);
    put_u64(buf, salt);
    return sha1_160(buf);
}

uint32_t crc32(BytesView data) {
    return static_cast<uint32_t>(::crc32(0L, data.data(), static_cast<uInt>(data.size())));
}

}  // namespace rpmesh
