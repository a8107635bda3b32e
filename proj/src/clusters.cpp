#include "rpmesh/clusters.hpp"

#include <algorithm>
#include <array>

#include "rpmesh/errors.hpp"
#include "rpmesh/hilbert.hpp"

namespace rpmesh {

bool AxisBox::contains(std::span<const uint64_t> point) const {
    if (point.size() != axes.size()) return false;
    for (size_t i = 0; i < axes.size(); ++i)
        if (!axes[i].contains(point[i])) return false;
    return true;
}

namespace {

// Disjoint = 0, partial = 1, inside = 2 for the subcube covered by the
// aligned block of 2^(dims*level) indices starting at `first`.
int classify_block(uint64_t first, uint32_t level, const AxisBox& box, uint32_t dims,
                   uint32_t bits) {
    std::array<uint64_t, 8> corner{};
    hilbert_decode(first, dims, bits, std::span<uint64_t>(corner.data(), dims));
    const uint64_t side_mask = level >= 64 ? ~0ull : (1ull << level) - 1;
    bool inside = true;
    for (uint32_t a = 0; a < dims; ++a) {
        const uint64_t lo = corner[a] & ~side_mask;
        const uint64_t hi = lo | side_mask;
        const KeywordInterval& want = box.axes[a];
        if (hi < want.lo || lo > want.hi) return 0;
        if (lo < want.lo || hi > want.hi) inside = false;
    }
    return inside ? 2 : 1;
}

uint64_t block_last(uint64_t first, uint32_t block_bits) {
    return block_bits >= 64 ? ~0ull : first + ((1ull << block_bits) - 1);
}

// Exact minimal covering: depth-first in index order, merging adjacent runs
// as they are emitted. Single cells (level 0) are always fully in or out,
// so recursion only ever descends through partial blocks of level >= 1.
void descend_exact(uint64_t first, uint32_t level, const AxisBox& box, uint32_t dims,
                   uint32_t bits, std::vector<Segment>& out) {
    int cls = classify_block(first, level, box, dims, bits);
    if (cls == 0) return;
    if (cls == 2) {
        uint64_t last = block_last(first, dims * level);
        if (!out.empty() && out.back().last + 1 == first)
            out.back().last = last;
        else
            out.push_back({first, last});
        return;
    }
    const uint64_t child_len = 1ull << (dims * (level - 1));
    uint64_t child = first;
    for (uint64_t i = 0; i < (1ull << dims); ++i, child += child_len)
        descend_exact(child, level - 1, box, dims, bits, out);
}

// Budgeted covering: refine level by level, but once the frontier of
// partially-overlapping blocks plus the emitted runs would exceed the
// budget, emit the remaining partial blocks whole. Result is a superset of
// the box (exact whenever the budget is never hit).
std::vector<Segment> descend_budgeted(const AxisBox& box, uint32_t dims, uint32_t bits,
                                      size_t budget) {
    std::vector<Segment> runs;
    std::vector<uint64_t> frontier;  // partial blocks at the current level
    uint32_t level = bits;
    if (int cls = classify_block(0, level, box, dims, bits); cls == 0) {
        return {};
    } else if (cls == 2) {
        return {{0, block_last(0, dims * level)}};
    }
    frontier.push_back(0);

    while (!frontier.empty() && level > 0) {
        --level;
        std::vector<uint64_t> next;
        const uint64_t child_len = 1ull << (dims * level);
        bool over = false;
        for (size_t f = 0; f < frontier.size(); ++f) {
            uint64_t child = frontier[f];
            for (uint64_t i = 0; i < (1ull << dims); ++i, child += child_len) {
                switch (classify_block(child, level, box, dims, bits)) {
                    case 2:
                        runs.push_back({child, block_last(child, dims * level)});
                        break;
                    case 1:
                        next.push_back(child);
                        break;
                    default:
                        break;
                }
            }
            if (runs.size() + next.size() > budget) {
                // Keep coarse coverage for everything not yet refined.
                for (size_t g = f + 1; g < frontier.size(); ++g)
                    runs.push_back(
                        {frontier[g], block_last(frontier[g], dims * (level + 1))});
                for (uint64_t p : next) runs.push_back({p, block_last(p, dims * level)});
                next.clear();
                over = true;
                break;
            }
        }
        frontier = std::move(next);
        if (over) break;
    }

    std::sort(runs.begin(), runs.end());
    std::vector<Segment> merged;
    for (const Segment& r : runs) {
        if (!merged.empty() && merged.back().last + 1 >= r.first)
            merged.back().last = std::max(merged.back().last, r.last);
        else
            merged.push_back(r);
    }
    return merged;
}

// Keeping the m-1 widest gaps as separators merges across all smaller gaps
// at once; the result equals repeatedly merging the narrowest gap (earliest
// on ties — so among equal widths the later separators survive).
std::vector<Segment> coarsen(std::vector<Segment> runs, size_t max_segments) {
    if (max_segments == 0 || runs.size() <= max_segments) return runs;
    std::vector<std::pair<uint64_t, size_t>> gaps;  // (gap width, separator position)
    gaps.reserve(runs.size() - 1);
    for (size_t i = 0; i + 1 < runs.size(); ++i)
        gaps.emplace_back(runs[i + 1].first - runs[i].last - 1, i);
    std::sort(gaps.begin(), gaps.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second > b.second;
    });
    gaps.resize(max_segments - 1);
    std::vector<size_t> cuts;
    cuts.reserve(gaps.size());
    for (const auto& [width, pos] : gaps) cuts.push_back(pos);
    std::sort(cuts.begin(), cuts.end());

    std::vector<Segment> merged;
    merged.reserve(max_segments);
    size_t start = 0;
    for (size_t cut : cuts) {
        merged.push_back({runs[start].first, runs[cut].last});
        start = cut + 1;
    }
    merged.push_back({runs[start].first, runs.back().last});
    return merged;
}

}  // namespace

std::vector<Segment> clusters_for_box(const AxisBox& box, const SpaceConfig& cfg,
                                      size_t max_segments) {
    cfg.validate();
    if (box.axes.size() != cfg.dims)
        throw Error(Errc::InvalidIndex, "box has " + std::to_string(box.axes.size()) +
                                            " axes, space has " + std::to_string(cfg.dims));
    const uint64_t mask = cfg.bits >= 64 ? ~0ull : (1ull << cfg.bits) - 1;
    for (const KeywordInterval& iv : box.axes) {
        if (iv.lo > iv.hi)
            throw Error(Errc::InvalidIndex, "axis interval with lo > hi");
        if (iv.hi > mask)
            throw Error(Errc::InvalidIndex, "axis interval exceeds 2^bits - 1");
    }

    if (max_segments == 0) {
        std::vector<Segment> out;
        descend_exact(0, cfg.bits, box, cfg.dims, cfg.bits, out);
        return out;
    }
    size_t budget = std::max<size_t>(4 * max_segments, 64);
    return coarsen(descend_budgeted(box, cfg.dims, cfg.bits, budget), max_segments);
}

}  // namespace rpmesh
