#pragma once

// Associative selection: does a stored profile satisfy a query profile?
//
// Every term of the query must be satisfied by some term of the stored
// profile (conjunction over query terms, existential over stored terms).
// A term satisfies another when their attribute patterns are compatible
// and — for attribute-value query terms — both carry value patterns whose
// match sets intersect. Compatibility is symmetric set intersection, so a
// stored wildcard meets a query exact just as the reverse does, and
// producer/consumer profiles rendezvous regardless of registration order.
// An attribute-only stored term carries no value and never satisfies an
// attribute-value query term.
//
// Ranges compare in positional-encoding order over the full, untruncated
// strings (shorter string padded with rank 0), so matching never suffers
// the truncation the fixed-width axis encoding applies.

#include "rpmesh/profile.hpp"

namespace rpmesh {

bool term_satisfies(const Term& stored, const Term& query);
bool matches(const Profile& stored, const Profile& query);

}  // namespace rpmesh
