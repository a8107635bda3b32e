#pragma once

// Byte buffer helpers shared by the wire codec and on-disk formats.
// All multi-byte integers are big-endian.

#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rpmesh {

using Bytes = std::vector<uint8_t>;
using BytesView = std::span<const uint8_t>;

inline Bytes to_bytes(std::string_view s) {
    return Bytes(s.begin(), s.end());
}

inline std::string to_string(BytesView b) {
    return std::string(reinterpret_cast<const char*>(b.data()), b.size());
}

inline void put_u8(Bytes& out, uint8_t v) { out.push_back(v); }

inline void put_u16(Bytes& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

inline void put_u32(Bytes& out, uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<uint8_t>(v >> s));
}

inline void put_u64(Bytes& out, uint64_t v) {
    for (int s = 56; s >= 0; s -= 8) out.push_back(static_cast<uint8_t>(v >> s));
}

// Cursor over an immutable byte range. Throws on truncated reads; the
// wire layer turns that into a protocol error.
class ByteReader {
public:
    explicit ByteReader(BytesView data) : data_(data) {}

    size_t remaining() const { return data_.size() - pos_; }
    bool empty() const { return remaining() == 0; }

    uint8_t u8() { return take(1)[0]; }

    uint16_t u16() {
        auto b = take(2);
        return static_cast<uint16_t>(b[0]) << 8 | b[1];
    }

    uint32_t u32() {
        auto b = take(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = v << 8 | b[i];
        return v;
    }

    uint64_t u64() {
        auto b = take(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v = v << 8 | b[i];
        return v;
    }

    BytesView take(size_t n) {
        if (n > remaining()) throw std::out_of_range("byte reader underrun");
        BytesView out = data_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

private:
    BytesView data_;
    size_t pos_ = 0;
};

std::string hex_encode(BytesView b);

}  // namespace rpmesh
