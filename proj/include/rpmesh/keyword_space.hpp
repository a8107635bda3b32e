#pragma once

// Keyword -> coordinate encoding for the discrete keyword space.
//
// Encoding is positional base-|alphabet| over case-folded strings, truncated
// or padded (pad = rank 0) to b/8 characters, so that a partial keyword
// ("li*") always covers a contiguous coordinate interval containing every
// keyword it prefixes. A hash here would scatter prefixes and break wildcard
// routing.

#include <cstdint>
#include <string>
#include <string_view>

#include "rpmesh/constants.hpp"

namespace rpmesh {

// Closed coordinate interval on one axis, [lo, hi] within [0, 2^b).
struct KeywordInterval {
    uint64_t lo = 0;
    uint64_t hi = 0;

    bool operator==(const KeywordInterval&) const = default;
    bool degenerate() const { return lo == hi; }
    bool contains(uint64_t v) const { return lo <= v && v <= hi; }
    bool intersects(const KeywordInterval& o) const { return lo <= o.hi && o.lo <= hi; }
};

// Bits per encoded character. Fixed at 8 so the default b=16 divides evenly;
// ranks of the declared alphabet fit comfortably.
inline constexpr uint32_t kCharBits = 8;

// Rank of a character in the alphabet (1-based; 0 is the pad). Folds case.
// Returns -1 for characters outside the alphabet.
int keyword_rank(char c, std::string_view alphabet = kKeywordAlphabet);

// Encode a keyword term onto one axis of order b.
//   exact term        -> degenerate interval [v, v]
//   "prefix*"         -> interval of all coordinates whose digit expansion
//                        starts with the encoded prefix
//   "*"               -> [0, 2^b - 1]
// Throws InvalidKeyword for characters outside the alphabet or a '*' that is
// not in final position; requires b % 8 == 0 and 8 <= b <= 64.
KeywordInterval encode_keyword(std::string_view term, uint32_t b,
                               std::string_view alphabet = kKeywordAlphabet);

// Coordinate of an exact term (degenerate interval shortcut).
uint64_t encode_exact(std::string_view term, uint32_t b,
                      std::string_view alphabet = kKeywordAlphabet);

// Three-way comparison in positional-encoding order without truncation:
// case-folded, shorter string padded with rank 0. Range terms compare
// values through this order.
int keyword_compare(std::string_view a, std::string_view b,
                    std::string_view alphabet = kKeywordAlphabet);

// Validates characters only (same rules as encode_keyword, any length).
void validate_keyword(std::string_view term, bool allow_wildcard = true,
                      std::string_view alphabet = kKeywordAlphabet);

std::string fold_keyword(std::string_view term);

}  // namespace rpmesh
