#include "rpmesh/hilbert.hpp"

#include <array>

#include "rpmesh/errors.hpp"

namespace rpmesh {
namespace {

constexpr uint32_t kMaxDims = 8;

void check_geometry(uint32_t dims, uint32_t bits) {
    if (dims < 1 || dims > kMaxDims)
        throw Error(Errc::InvalidIndex, "curve dims must be in [1, 8], got " + std::to_string(dims));
    if (bits < 1 || bits > 64)
        throw Error(Errc::InvalidIndex, "curve bits must be in [1, 64], got " + std::to_string(bits));
    if (static_cast<uint64_t>(dims) * bits > 64)
        throw Error(Errc::InvalidIndex, "dims * bits must fit in 64 bits");
}

uint64_t axis_mask(uint32_t bits) {
    return bits >= 64 ? ~0ull : (1ull << bits) - 1;
}

// The transposed form keeps the index as d words of b bits each: bit q of
// word i is index bit q*d + (d-1-i), i.e. word 0 carries the most
// significant bit of every d-bit group.

// Transposed index -> axis coordinates, in place.
void transpose_to_axes(std::array<uint64_t, kMaxDims>& x, uint32_t bits, uint32_t dims) {
    uint64_t n = 2ull << (bits - 1);
    // Gray decode by H ^ (H/2).
    uint64_t t = x[dims - 1] >> 1;
    for (uint32_t i = dims - 1; i > 0; --i) x[i] ^= x[i - 1];
    x[0] ^= t;
    // Undo excess work.
    for (uint64_t q = 2; q != n; q <<= 1) {
        uint64_t p = q - 1;
        for (uint32_t j = dims; j-- > 0;) {
            if (x[j] & q) {
                x[0] ^= p;  // invert low bits of x[0]
            } else {
                t = (x[0] ^ x[j]) & p;  // exchange low bits of x[0] and x[j]
                x[0] ^= t;
                x[j] ^= t;
            }
        }
    }
}

// Axis coordinates -> transposed index, in place.
void axes_to_transpose(std::array<uint64_t, kMaxDims>& x, uint32_t bits, uint32_t dims) {
    uint64_t m = 1ull << (bits - 1);
    uint64_t t;
    // Inverse undo.
    for (uint64_t q = m; q > 1; q >>= 1) {
        uint64_t p = q - 1;
        for (uint32_t i = 0; i < dims; ++i) {
            if (x[i] & q) {
                x[0] ^= p;
            } else {
                t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
    }
    // Gray encode.
    for (uint32_t i = 1; i < dims; ++i) x[i] ^= x[i - 1];
    t = 0;
    for (uint64_t q = m; q > 1; q >>= 1)
        if (x[dims - 1] & q) t ^= q - 1;
    for (uint32_t i = 0; i < dims; ++i) x[i] ^= t;
}

}  // namespace

uint64_t hilbert_encode(std::span<const uint64_t> axes, uint32_t bits) {
    const uint32_t dims = static_cast<uint32_t>(axes.size());
    check_geometry(dims, bits);
    const uint64_t mask = axis_mask(bits);
    for (uint64_t a : axes)
        if (a > mask)
            throw Error(Errc::InvalidIndex,
                        "axis value " + std::to_string(a) + " exceeds 2^bits - 1");
    if (dims == 1) return axes[0];

    std::array<uint64_t, kMaxDims> x{};
    for (uint32_t i = 0; i < dims; ++i) x[i] = axes[i];
    axes_to_transpose(x, bits, dims);

    uint64_t index = 0;
    for (uint32_t q = bits; q-- > 0;)
        for (uint32_t i = 0; i < dims; ++i) index = (index << 1) | ((x[i] >> q) & 1);
    return index;
}

void hilbert_decode(uint64_t index, uint32_t dims, uint32_t bits, std::span<uint64_t> axes_out) {
    check_geometry(dims, bits);
    if (axes_out.size() != dims)
        throw Error(Errc::InvalidIndex, "output span size does not match dims");
    const uint32_t total = dims * bits;
    if (total < 64 && (index >> total) != 0)
        throw Error(Errc::InvalidIndex, "index exceeds 2^(dims*bits) - 1");
    if (dims == 1) {
        axes_out[0] = index;
        return;
    }

    // Deinterleave: most significant index bit lands in word 0, bit bits-1.
    std::array<uint64_t, kMaxDims> x{};
    uint32_t pos = total;
    for (uint32_t q = bits; q-- > 0;)
        for (uint32_t i = 0; i < dims; ++i) {
            --pos;
            x[i] |= ((index >> pos) & 1) << q;
        }
    transpose_to_axes(x, bits, dims);
    for (uint32_t i = 0; i < dims; ++i) axes_out[i] = x[i];
}

std::vector<uint64_t> hilbert_decode(uint64_t index, uint32_t dims, uint32_t bits) {
    std::vector<uint64_t> axes(dims);
    hilbert_decode(index, dims, bits, axes);
    return axes;
}

}  // namespace rpmesh
