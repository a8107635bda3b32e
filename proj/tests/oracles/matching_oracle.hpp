#pragma once

// Brute-force satisfaction oracle for associative matching.
//
// Where the production matcher decides pattern-set intersection with an
// algebra over pattern kinds, this oracle materializes each pattern's match
// set over a bounded string universe and intersects the sets directly. For
// the universes used in tests (every string up to length `max_len` over a
// tiny alphabet, with pattern stems and range endpoints drawn short enough
// that any nonempty intersection contains a short witness), enumeration is
// exact.

#include <string>
#include <vector>

#include "rpmesh/keyword_space.hpp"
#include "rpmesh/profile.hpp"

namespace matching_oracle {

// All strings of length 0..max_len over `chars` (the empty string is kept;
// it never matches any pattern but exercises boundaries).
inline std::vector<std::string> universe(std::string_view chars, size_t max_len) {
    std::vector<std::string> out{""};
    size_t begin = 0;
    for (size_t len = 1; len <= max_len; ++len) {
        size_t end = out.size();
        for (size_t i = begin; i < end; ++i)
            for (char c : chars) out.push_back(out[i] + c);
        begin = end;
    }
    return out;
}

// Does a single pattern (term attribute or term value, in profile text
// form) match a concrete string? Decided per the satisfaction rules, one
// string at a time.
inline bool pattern_matches_string(const rpmesh::Term& t, bool attribute_side,
                                   const std::string& s) {
    if (s.empty()) return false;
    if (attribute_side || t.kind == rpmesh::TermKind::Exact ||
        t.kind == rpmesh::TermKind::Partial || t.kind == rpmesh::TermKind::Wildcard) {
        std::string pat = attribute_side ? t.attribute
                          : t.kind == rpmesh::TermKind::Wildcard ? std::string("*")
                                                                 : t.value;
        if (pat == "*") return true;
        if (!pat.empty() && pat.back() == '*') {
            std::string stem = pat.substr(0, pat.size() - 1);
            return s.size() >= stem.size() && s.compare(0, stem.size(), stem) == 0;
        }
        return s == pat;
    }
    // Range: positional-encoding order.
    return rpmesh::keyword_compare(t.lo, s) <= 0 && rpmesh::keyword_compare(s, t.hi) <= 0;
}

// Do two patterns share at least one matching string in the universe?
inline bool patterns_overlap(const rpmesh::Term& a, const rpmesh::Term& b,
                             bool attribute_side, const std::vector<std::string>& uni) {
    for (const std::string& s : uni)
        if (pattern_matches_string(a, attribute_side, s) &&
            pattern_matches_string(b, attribute_side, s))
            return true;
    return false;
}

inline bool term_satisfies(const rpmesh::Term& stored, const rpmesh::Term& query,
                           const std::vector<std::string>& uni) {
    if (!patterns_overlap(stored, query, /*attribute_side=*/true, uni)) return false;
    if (query.kind == rpmesh::TermKind::AttributeOnly) return true;
    if (stored.kind == rpmesh::TermKind::AttributeOnly) return false;
    return patterns_overlap(stored, query, /*attribute_side=*/false, uni);
}

inline bool matches(const rpmesh::Profile& stored, const rpmesh::Profile& query,
                    const std::vector<std::string>& uni) {
    for (const rpmesh::Term& q : query.terms) {
        bool ok = false;
        for (const rpmesh::Term& s : stored.terms)
            if (term_satisfies(s, q, uni)) {
                ok = true;
                break;
            }
        if (!ok) return false;
    }
    return true;
}

}  // namespace matching_oracle
