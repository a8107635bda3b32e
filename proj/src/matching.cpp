#include "rpmesh/matching.hpp"

#include <string_view>

#include "rpmesh/keyword_space.hpp"

namespace rpmesh {
namespace {

enum class PatKind { Exact, Prefix, Any, Range };

struct Pattern {
    PatKind kind = PatKind::Exact;
    std::string_view a;  // Exact value / Prefix stem / Range lo
    std::string_view b;  // Range hi
};

Pattern keyword_pattern(std::string_view s) {
    if (s == "*") return {PatKind::Any, {}, {}};
    if (!s.empty() && s.back() == '*') return {PatKind::Prefix, s.substr(0, s.size() - 1), {}};
    return {PatKind::Exact, s, {}};
}

Pattern value_pattern(const Term& t) {
    switch (t.kind) {
        case TermKind::Exact: return {PatKind::Exact, t.value, {}};
        case TermKind::Partial: return keyword_pattern(t.value);
        case TermKind::Wildcard: return {PatKind::Any, {}, {}};
        case TermKind::Range: return {PatKind::Range, t.lo, t.hi};
        case TermKind::AttributeOnly: break;
    }
    return {PatKind::Any, {}, {}};  // unreachable for value positions
}

// Compare the first |p| character ranks of s (padded with rank 0) against p.
// Result < 0 / 0 / > 0 mirrors keyword order restricted to those positions.
int compare_ranks_prefix(std::string_view s, std::string_view p) {
    for (size_t i = 0; i < p.size(); ++i) {
        int rs = i < s.size() ? keyword_rank(s[i]) : 0;
        int rp = keyword_rank(p[i]);
        if (rs != rp) return rs < rp ? -1 : 1;
    }
    return 0;
}

bool prefix_contains(std::string_view stem, std::string_view s) {
    return s.size() >= stem.size() && compare_ranks_prefix(s, stem) == 0;
}

// Do the match sets of two patterns intersect? The prefix set {s : stem
// prefix of s} spans [stem, stem+max-chars...) in positional order: its
// minimum is the stem itself, and a range reaches into it iff the range's
// low end does not exceed every stem-prefixed string.
bool patterns_intersect(const Pattern& x, const Pattern& y) {
    if (x.kind == PatKind::Any || y.kind == PatKind::Any) return true;
    if (x.kind == PatKind::Exact && y.kind == PatKind::Exact)
        return keyword_compare(x.a, y.a) == 0;
    if (x.kind == PatKind::Exact && y.kind == PatKind::Prefix)
        return prefix_contains(y.a, x.a);
    if (x.kind == PatKind::Prefix && y.kind == PatKind::Exact)
        return prefix_contains(x.a, y.a);
    if (x.kind == PatKind::Prefix && y.kind == PatKind::Prefix)
        return prefix_contains(x.a, y.a) || prefix_contains(y.a, x.a);
    if (x.kind == PatKind::Range && y.kind == PatKind::Range)
        return keyword_compare(x.a, y.b) <= 0 && keyword_compare(y.a, x.b) <= 0;
    if (x.kind == PatKind::Range && y.kind == PatKind::Exact)
        return keyword_compare(x.a, y.a) <= 0 && keyword_compare(y.a, x.b) <= 0;
    if (x.kind == PatKind::Exact && y.kind == PatKind::Range)
        return patterns_intersect(y, x);
    if (x.kind == PatKind::Range && y.kind == PatKind::Prefix)
        return keyword_compare(y.a, x.b) <= 0 && compare_ranks_prefix(x.a, y.a) <= 0;
    if (x.kind == PatKind::Prefix && y.kind == PatKind::Range)
        return patterns_intersect(y, x);
    return false;
}

}  // namespace

bool term_satisfies(const Term& stored, const Term& query) {
    if (!patterns_intersect(keyword_pattern(stored.attribute),
                            keyword_pattern(query.attribute)))
        return false;
    if (query.kind == TermKind::AttributeOnly) return true;
    if (stored.kind == TermKind::AttributeOnly) return false;
    return patterns_intersect(value_pattern(stored), value_pattern(query));
}

bool matches(const Profile& stored, const Profile& query) {
    for (const Term& q : query.terms) {
        bool satisfied = false;
        for (const Term& s : stored.terms)
            if (term_satisfies(s, q)) {
                satisfied = true;
                break;
            }
        if (!satisfied) return false;
    }
    return true;
}

}  // namespace rpmesh
