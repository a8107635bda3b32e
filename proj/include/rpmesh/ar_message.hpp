#pragma once

// The rendezvous message quintuplet: (header, action, data, location,
// topology). The header carries the profile plus opaque credentials;
// topology names a function payload for the function-lifecycle actions.

#include <cstdint>
#include <optional>
#include <string>

#include "rpmesh/bytes.hpp"
#include "rpmesh/digest.hpp"
#include "rpmesh/geo.hpp"
#include "rpmesh/profile.hpp"

namespace rpmesh {

enum class Action : uint8_t {
    STORE = 1,
    STATISTICS = 2,
    STORE_FUNCTION = 3,
    START_FUNCTION = 4,
    STOP_FUNCTION = 5,
    NOTIFY_INTEREST = 6,
    NOTIFY_DATA = 7,
    DELETE = 8,
};

const char* action_name(Action a);
std::optional<Action> action_from_name(std::string_view name);  // accepts "store-function" or "store_function"

struct FunctionRef {
    std::string name;         // keyword string, non-empty
    Bytes blob;               // command descriptor (argv + stdin contract)
    std::string runtime_tag;  // executor selector, e.g. "argv-v1"

    bool operator==(const FunctionRef&) const = default;
};

struct ARMessage {
    Profile profile;
    Bytes credentials;  // opaque, logged, never enforced
    Action action = Action::STORE;
    Bytes data;
    std::optional<GeoPoint> location;   // overrides sender region as routing origin
    std::optional<FunctionRef> function;

    bool operator==(const ARMessage&) const = default;

    Bytes encode() const;
    static ARMessage decode(BytesView bytes);

    // Duplicate-suppression key: digest over profile bytes + data bytes
    // (the action byte is mixed in so distinct actions never collide; for a
    // fixed action this is still a pure function of profile and data).
    Digest256 content_digest() const;
};

}  // namespace rpmesh
