#pragma once

// d-dimensional Hilbert curve over a 2^b x ... x 2^b grid.
//
// The curve linearizes the keyword space so that coordinates close in the
// grid stay close in index order; every aligned dyadic block of 2^(d*s)
// consecutive indices covers an axis-aligned subcube of side 2^s. Routing
// and wildcard narrowing both lean on that block property.
//
// d = 1 is the identity curve (index == coordinate).

#include <cstdint>
#include <span>
#include <vector>

namespace rpmesh {

// Coordinates -> index. axes.size() = d in [1, 8], each axis value < 2^bits,
// d * bits <= 64. Throws InvalidIndex on violations.
uint64_t hilbert_encode(std::span<const uint64_t> axes, uint32_t bits);

// Index -> coordinates. Inverse of hilbert_encode.
void hilbert_decode(uint64_t index, uint32_t dims, uint32_t bits, std::span<uint64_t> axes_out);
std::vector<uint64_t> hilbert_decode(uint64_t index, uint32_t dims, uint32_t bits);

}  // namespace rpmesh
