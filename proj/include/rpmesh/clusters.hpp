#pragma once

// Covering of an axis-aligned box in keyword space by contiguous runs of
// curve indices ("clusters"). A partial or range term widens one axis to an
// interval; the box it spans maps to a small set of index segments, each of
// which routes like a point would.

#include <cstdint>
#include <vector>

#include "rpmesh/constants.hpp"
#include "rpmesh/keyword_space.hpp"

namespace rpmesh {

// Closed run of curve indices [first, last].
struct Segment {
    uint64_t first = 0;
    uint64_t last = 0;

    bool operator==(const Segment&) const = default;
    auto operator<=>(const Segment&) const = default;
    bool contains(uint64_t idx) const { return first <= idx && idx <= last; }
};

// Axis-aligned box: one closed interval per axis. Must have exactly
// cfg.dims axes when passed to clusters_for_box.
struct AxisBox {
    std::vector<KeywordInterval> axes;

    bool operator==(const AxisBox&) const = default;
    bool contains(std::span<const uint64_t> point) const;
};

// Covering of the box by contiguous index segments, sorted ascending and
// non-adjacent (gap >= 1 between segments).
//
// max_segments = 0: exact minimal covering (can be as large as the box
// perimeter; only sensible for small spaces or narrow boxes).
//
// max_segments > 0: refinement stops once the covering would exceed a small
// multiple of max_segments, unrefined blocks are kept whole, and adjacent
// runs merge across the narrowest gaps first until max_segments remain. The
// result covers the box (superset) and equals the exact covering whenever
// that covering is small enough.
std::vector<Segment> clusters_for_box(const AxisBox& box, const SpaceConfig& cfg,
                                      size_t max_segments = 0);

}  // namespace rpmesh
