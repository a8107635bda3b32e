#pragma once

// Profiles: ordered tuples of keyword terms naming data, interests, or
// functions. Text syntax (CLI and config): comma-separated terms
//
//   attr            attribute-only (attr may end in '*', or be bare '*')
//   attr:value      exact pair
//   attr:prefix*    partial value
//   attr:*          any value
//   attr:lo..hi     range in positional-encoding order
//
// For routing, term i maps to axis i by encoding the term's canonical text
// ("attr" or "attr:value...") as one keyword; ':' is part of the keyword
// alphabet precisely so a pair term stays a single encodable string and a
// partial value is an ordinary keyword prefix.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "rpmesh/bytes.hpp"
#include "rpmesh/clusters.hpp"
#include "rpmesh/constants.hpp"

namespace rpmesh {

enum class TermKind : uint8_t {
    AttributeOnly = 0,  // no value; attribute itself may be a pattern
    Exact = 1,
    Partial = 2,   // value ends in '*'
    Wildcard = 3,  // value is bare '*'
    Range = 4,     // lo..hi
};

struct Term {
    TermKind kind = TermKind::AttributeOnly;
    std::string attribute;  // case-folded; may end in '*' or be "*"
    std::string value;      // Exact / Partial (Partial keeps the trailing '*')
    std::string lo, hi;     // Range endpoints (exact keywords, lo <= hi)

    bool operator==(const Term&) const = default;

    std::string text() const;  // canonical single-term syntax
    // Keyword text routed on this term's axis ("attr", "attr:value",
    // "attr:pre*", "attr:*"); Range terms route through lo/hi instead.
    std::string routing_text() const;
    // Axis coverage of this term: degenerate for exact pairs, a prefix
    // interval for patterns and attribute-only terms (those must also cover
    // "attr:..." cells), endpoint-spanning for ranges. Always a superset of
    // the cells holding data this term can match.
    KeywordInterval axis_interval(uint32_t bits,
                                  std::string_view alphabet = kKeywordAlphabet) const;
};

struct Profile {
    std::vector<Term> terms;

    bool operator==(const Profile&) const = default;

    static Profile parse(std::string_view text);
    std::string text() const;

    Bytes encode() const;  // deterministic binary form (wire and digest input)
    static Profile decode(ByteReader& r);
    static Profile decode(BytesView bytes);

    // True when the profile routes to a single point: exactly d concrete
    // terms (Exact pairs or pattern-free AttributeOnly).
    bool simple(uint32_t dims) const;
};

// Routing target of a profile: a single cell for simple profiles, an
// axis-aligned box otherwise (missing trailing terms are bare wildcards).
struct Target {
    bool is_point = false;
    std::vector<uint64_t> point;  // filled when is_point (each axis interval's lo)
    AxisBox box;                  // always filled
};

// Throws ProfileTooWide when the profile has more than cfg.dims terms.
Target profile_to_target(const Profile& p, const SpaceConfig& cfg);

}  // namespace rpmesh
