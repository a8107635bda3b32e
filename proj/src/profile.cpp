#include "rpmesh/profile.hpp"

#include <algorithm>

#include "rpmesh/errors.hpp"
#include "rpmesh/keyword_space.hpp"

namespace rpmesh {
namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

Term parse_term(std::string_view raw) {
    Term t;
    size_t colon = raw.find(':');
    if (colon == std::string_view::npos) {
        t.kind = TermKind::AttributeOnly;
        t.attribute = fold_keyword(raw);
        validate_keyword(t.attribute);
        return t;
    }
    t.attribute = fold_keyword(raw.substr(0, colon));
    validate_keyword(t.attribute);
    std::string value = fold_keyword(raw.substr(colon + 1));
    if (value.empty())
        throw Error(Errc::InvalidKeyword, "term '" + std::string(raw) + "' has an empty value");
    if (size_t dots = value.find(".."); dots != std::string::npos) {
        t.kind = TermKind::Range;
        t.lo = value.substr(0, dots);
        t.hi = value.substr(dots + 2);
        validate_keyword(t.lo, /*allow_wildcard=*/false);
        validate_keyword(t.hi, /*allow_wildcard=*/false);
        if (keyword_compare(t.lo, t.hi) > 0)
            throw Error(Errc::InvalidKeyword,
                        "range '" + std::string(raw) + "' has lo > hi in encoding order");
        return t;
    }
    validate_keyword(value);
    if (value == "*") {
        t.kind = TermKind::Wildcard;
    } else if (value.back() == '*') {
        t.kind = TermKind::Partial;
        t.value = value;
    } else {
        t.kind = TermKind::Exact;
        t.value = value;
    }
    return t;
}

}  // namespace

std::string Term::text() const {
    switch (kind) {
        case TermKind::AttributeOnly: return attribute;
        case TermKind::Exact:
        case TermKind::Partial: return attribute + ":" + value;
        case TermKind::Wildcard: return attribute + ":*";
        case TermKind::Range: return attribute + ":" + lo + ".." + hi;
    }
    throw Error(Errc::ProtocolError, "corrupt term kind");
}

std::string Term::routing_text() const {
    switch (kind) {
        case TermKind::AttributeOnly: return attribute;
        case TermKind::Exact:
        case TermKind::Partial: return attribute + ":" + value;
        case TermKind::Wildcard: return attribute + ":*";
        case TermKind::Range:
            throw Error(Errc::ProtocolError, "range terms route through endpoints");
    }
    throw Error(Errc::ProtocolError, "corrupt term kind");
}

KeywordInterval Term::axis_interval(uint32_t bits, std::string_view alphabet) const {
    // A pattern attribute opens the axis at the star; nothing after it can
    // narrow a cell prefix that already varies, so route on the stem alone.
    if (!attribute.empty() && attribute.back() == '*')
        return encode_keyword(attribute, bits, alphabet);
    switch (kind) {
        case TermKind::AttributeOnly:
            // Cover the bare attribute cell and every "attr:..." cell so an
            // attribute-only interest rendezvouses with attribute-value data.
            return encode_keyword(attribute + "*", bits, alphabet);
        case TermKind::Range: {
            KeywordInterval a = encode_keyword(attribute + ":" + lo, bits, alphabet);
            KeywordInterval b = encode_keyword(attribute + ":" + hi, bits, alphabet);
            return {a.lo, b.hi};
        }
        default:
            return encode_keyword(routing_text(), bits, alphabet);
    }
}

Profile Profile::parse(std::string_view text) {
    Profile p;
    std::string_view rest = trim(text);
    if (rest.empty()) return p;
    while (true) {
        size_t comma = rest.find(',');
        std::string_view piece =
            comma == std::string_view::npos ? rest : rest.substr(0, comma);
        piece = trim(piece);
        if (piece.empty())
            throw Error(Errc::InvalidKeyword, "empty term in profile '" + std::string(text) + "'");
        p.terms.push_back(parse_term(piece));
        if (comma == std::string_view::npos) break;
        rest = rest.substr(comma + 1);
    }
    return p;
}

std::string Profile::text() const {
    std::string out;
    for (size_t i = 0; i < terms.size(); ++i) {
        if (i) out += ',';
        out += terms[i].text();
    }
    return out;
}

Bytes Profile::encode() const {
    Bytes out;
    put_u16(out, static_cast<uint16_t>(terms.size()));
    for (const Term& t : terms) {
        put_u8(out, static_cast<uint8_t>(t.kind));
        put_u16(out, static_cast<uint16_t>(t.attribute.size()));
        out.insert(out.end(), t.attribute.begin(), t.attribute.end());
        switch (t.kind) {
            case TermKind::Exact:
            case TermKind::Partial:
                put_u16(out, static_cast<uint16_t>(t.value.size()));
                out.insert(out.end(), t.value.begin(), t.value.end());
                break;
            case TermKind::Range:
                put_u16(out, static_cast<uint16_t>(t.lo.size()));
                out.insert(out.end(), t.lo.begin(), t.lo.end());
                put_u16(out, static_cast<uint16_t>(t.hi.size()));
                out.insert(out.end(), t.hi.begin(), t.hi.end());
                break;
            default:
                break;
        }
    }
    return out;
}

Profile Profile::decode(ByteReader& r) {
    Profile p;
    uint16_t count = r.u16();
    p.terms.reserve(count);
    for (uint16_t i = 0; i < count; ++i) {
        Term t;
        uint8_t kind = r.u8();
        if (kind > static_cast<uint8_t>(TermKind::Range))
            throw Error(Errc::ProtocolError, "unknown term kind byte " + std::to_string(kind));
        t.kind = static_cast<TermKind>(kind);
        t.attribute = to_string(r.take(r.u16()));
        switch (t.kind) {
            case TermKind::Exact:
            case TermKind::Partial:
                t.value = to_string(r.take(r.u16()));
                break;
            case TermKind::Range:
                t.lo = to_string(r.take(r.u16()));
                t.hi = to_string(r.take(r.u16()));
                break;
            default:
                break;
        }
        p.terms.push_back(std::move(t));
    }
    return p;
}

Profile Profile::decode(BytesView bytes) {
    ByteReader r(bytes);
    Profile p = decode(r);
    if (!r.empty())
        throw Error(Errc::ProtocolError, "trailing bytes after profile");
    return p;
}

bool Profile::simple(uint32_t dims) const {
    if (terms.size() != dims) return false;
    return std::all_of(terms.begin(), terms.end(), [](const Term& t) {
        if (t.kind != TermKind::Exact && t.kind != TermKind::AttributeOnly) return false;
        // A pattern attribute names a set of cells, not one.
        return t.attribute.find('*') == std::string::npos;
    });
}

Target profile_to_target(const Profile& p, const SpaceConfig& cfg) {
    cfg.validate();
    if (p.terms.size() > cfg.dims)
        throw Error(Errc::ProfileTooWide, "profile has " + std::to_string(p.terms.size()) +
                                              " terms, space has " + std::to_string(cfg.dims) +
                                              " dimensions");
    Target t;
    t.is_point = p.simple(cfg.dims);
    const uint64_t axis_max = cfg.bits >= 64 ? ~0ull : (1ull << cfg.bits) - 1;
    for (uint32_t i = 0; i < cfg.dims; ++i) {
        KeywordInterval iv = i < p.terms.size()
                                 ? p.terms[i].axis_interval(cfg.bits, cfg.alphabet)
                                 : KeywordInterval{0, axis_max};
        t.box.axes.push_back(iv);
        if (t.is_point) t.point.push_back(iv.lo);
    }
    return t;
}

}  // namespace rpmesh
