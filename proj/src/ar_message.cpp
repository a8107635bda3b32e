#include "rpmesh/ar_message.hpp"

#include <bit>

#include "rpmesh/errors.hpp"

namespace rpmesh {
namespace {

// Field tags inside an encoded message (tag u8, length u16, bytes).
enum : uint8_t {
    kTagProfile = 1,
    kTagCredentials = 2,
    kTagAction = 3,
    kTagData = 4,
    kTagLocation = 5,
    kTagFnName = 6,
    kTagFnBlob = 7,
    kTagFnRuntime = 8,
};

void put_field(Bytes& out, uint8_t tag, BytesView body) {
    if (body.size() > kMaxFieldBytes)
        throw Error(Errc::PayloadTooLarge, "field " + std::to_string(tag) + " is " +
                                               std::to_string(body.size()) +
                                               " bytes, limit " + std::to_string(kMaxFieldBytes));
    put_u8(out, tag);
    put_u16(out, static_cast<uint16_t>(body.size()));
    out.insert(out.end(), body.begin(), body.end());
}

void put_field(Bytes& out, uint8_t tag, std::string_view body) {
    put_field(out, tag, BytesView(reinterpret_cast<const uint8_t*>(body.data()), body.size()));
}

}  // namespace

const char* action_name(Action a) {
    switch (a) {
        case Action::STORE: return "store";
        case Action::STATISTICS: return "statistics";
        case Action::STORE_FUNCTION: return "store_function";
        case Action::START_FUNCTION: return "start_function";
        case Action::STOP_FUNCTION: return "stop_function";
        case Action::NOTIFY_INTEREST: return "notify_interest";
        case Action::NOTIFY_DATA: return "notify_data";
        case Action::DELETE: return "delete";
    }
    return "unknown";
}

std::optional<Action> action_from_name(std::string_view name) {
    std::string norm(name);
    for (char& c : norm)
        if (c == '-') c = '_';
    for (Action a : {Action::STORE, Action::STATISTICS, Action::STORE_FUNCTION,
                     Action::START_FUNCTION, Action::STOP_FUNCTION, Action::NOTIFY_INTEREST,
                     Action::NOTIFY_DATA, Action::DELETE})
        if (norm == action_name(a)) return a;
    return std::nullopt;
}

Bytes ARMessage::encode() const {
    Bytes out;
    put_field(out, kTagProfile, profile.encode());
    if (!credentials.empty()) put_field(out, kTagCredentials, credentials);
    Bytes act{static_cast<uint8_t>(action)};
    put_field(out, kTagAction, act);
    if (!data.empty()) put_field(out, kTagData, data);
    if (location) {
        location->validate();
        Bytes loc;
        put_u64(loc, std::bit_cast<uint64_t>(location->lat));
        put_u64(loc, std::bit_cast<uint64_t>(location->lon));
        put_field(out, kTagLocation, loc);
    }
    if (function) {
        if (function->name.empty())
            throw Error(Errc::ProtocolError, "function payload with empty name");
        put_field(out, kTagFnName, function->name);
        put_field(out, kTagFnBlob, function->blob);
        put_field(out, kTagFnRuntime, function->runtime_tag);
    }
    return out;
}

ARMessage ARMessage::decode(BytesView bytes) {
    ARMessage m;
    bool saw_profile = false, saw_action = false;
    ByteReader r(bytes);
    while (!r.empty()) {
        uint8_t tag = r.u8();
        BytesView body = r.take(r.u16());
        switch (tag) {
            case kTagProfile:
                m.profile = Profile::decode(body);
                saw_profile = true;
                break;
            case kTagCredentials:
                m.credentials.assign(body.begin(), body.end());
                break;
            case kTagAction: {
                if (body.size() != 1)
                    throw Error(Errc::ProtocolError, "action field must be 1 byte");
                uint8_t a = body[0];
                if (a < static_cast<uint8_t>(Action::STORE) ||
                    a > static_cast<uint8_t>(Action::DELETE))
                    throw Error(Errc::ProtocolError,
                                "unknown action byte " + std::to_string(a));
                m.action = static_cast<Action>(a);
                saw_action = true;
                break;
            }
            case kTagData:
                m.data.assign(body.begin(), body.end());
                break;
            case kTagLocation: {
                ByteReader lr(body);
                GeoPoint g;
                g.lat = std::bit_cast<double>(lr.u64());
                g.lon = std::bit_cast<double>(lr.u64());
                g.validate();
                m.location = g;
                break;
            }
            case kTagFnName:
                if (!m.function) m.function.emplace();
                m.function->name = to_string(body);
                break;
            case kTagFnBlob:
                if (!m.function) m.function.emplace();
                m.function->blob.assign(body.begin(), body.end());
                break;
            case kTagFnRuntime:
                if (!m.function) m.function.emplace();
                m.function->runtime_tag = to_string(body);
                break;
            default:
                break;  // unknown fields are skippable by construction
        }
    }
    if (!saw_profile || !saw_action)
        throw Error(Errc::ProtocolError, "message missing profile or action field");
    if (m.function && m.function->name.empty())
        throw Error(Errc::ProtocolError, "function payload with empty name");
    return m;
}

Digest256 ARMessage::content_digest() const {
    Bytes mix = profile.encode();
    put_u8(mix, static_cast<uint8_t>(action));
    mix.insert(mix.end(), data.begin(), data.end());
    return sha256(mix);
}

}  // namespace rpmesh
