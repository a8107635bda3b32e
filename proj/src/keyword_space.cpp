#include "rpmesh/keyword_space.hpp"

#include <algorithm>
#include <cctype>

#include "rpmesh/digest.hpp"
#include "rpmesh/errors.hpp"

namespace rpmesh {

void SpaceConfig::validate() const {
    if (dims < 1 || dims > 8)
        throw Error(Errc::InvalidIndex, "dims must be in [1, 8], got " + std::to_string(dims));
    if (bits < 1 || bits > 64)
        throw Error(Errc::InvalidIndex, "bits must be in [1, 64], got " + std::to_string(bits));
    if (static_cast<uint64_t>(dims) * bits > 64)
        throw Error(Errc::InvalidIndex, "dims * bits must fit in 64 bits, got " +
                                            std::to_string(dims * bits));
    if (alphabet.empty() || alphabet.size() > 255)
        throw Error(Errc::InvalidIndex, "alphabet must have 1..255 characters");
    for (size_t i = 0; i < alphabet.size(); ++i) {
        char c = alphabet[i];
        if (c == '*') throw Error(Errc::InvalidIndex, "alphabet must not contain '*'");
        if (std::isupper(static_cast<unsigned char>(c)))
            throw Error(Errc::InvalidIndex, "alphabet must be case-folded");
        if (alphabet.find(c, i + 1) != std::string::npos)
            throw Error(Errc::InvalidIndex, std::string("duplicate alphabet character '") + c + "'");
    }
}

std::array<uint8_t, 8> SpaceConfig::handshake_digest() const {
    // Canonical text form keeps the digest stable across struct layout changes.
    std::string canon = "d=" + std::to_string(dims) + ";b=" + std::to_string(bits) +
                        ";curve=" + curve_tag + ";alphabet=" + alphabet;
    Digest256 full = sha256(to_bytes(canon));
    std::array<uint8_t, 8> out{};
    std::copy_n(full.begin(), out.size(), out.begin());
    return out;
}

std::string fold_keyword(std::string_view term) {
    std::string out(term);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

int keyword_rank(char c, std::string_view alphabet) {
    char folded = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    size_t pos = alphabet.find(folded);
    if (pos == std::string_view::npos) return -1;
    return static_cast<int>(pos) + 1;  // 0 is reserved for the pad
}

void validate_keyword(std::string_view term, bool allow_wildcard, std::string_view alphabet) {
    if (term.empty()) throw Error(Errc::InvalidKeyword, "empty keyword");
    for (size_t i = 0; i < term.size(); ++i) {
        char c = term[i];
        if (c == '*') {
            if (!allow_wildcard)
                throw Error(Errc::InvalidKeyword, "wildcard not allowed here: '" +
                                                      std::string(term) + "'");
            if (i + 1 != term.size())
                throw Error(Errc::InvalidKeyword,
                            "'*' only allowed in final position: '" + std::string(term) + "'");
            continue;
        }
        if (keyword_rank(c, alphabet) < 0)
            throw Error(Errc::InvalidKeyword, std::string("character '") + c +
                                                  "' outside keyword alphabet in '" +
                                                  std::string(term) + "'");
    }
}

KeywordInterval encode_keyword(std::string_view term, uint32_t b, std::string_view alphabet) {
    if (b < kCharBits || b > 64 || b % kCharBits != 0)
        throw Error(Errc::InvalidIndex,
                    "keyword axis order must be a multiple of 8 in [8, 64], got " +
                        std::to_string(b));
    validate_keyword(term, /*allow_wildcard=*/true, alphabet);

    bool wildcard = term.back() == '*';
    std::string_view stem = wildcard ? term.substr(0, term.size() - 1) : term;
    const uint32_t nchars = b / kCharBits;

    uint64_t lo = 0, hi = 0;
    uint32_t used = 0;
    for (char c : stem) {
        if (used == nchars) break;  // overflow characters cannot change the cell
        uint64_t rank = static_cast<uint64_t>(keyword_rank(c, alphabet));
        lo = (lo << kCharBits) | rank;
        hi = (hi << kCharBits) | rank;
        ++used;
    }
    // Remaining positions: pad (rank 0) for the exact point / interval floor;
    // a trailing wildcard opens every remaining digit to its maximum.
    for (uint32_t i = used; i < nchars; ++i) {
        lo <<= kCharBits;
        hi = (hi << kCharBits) | ((1ull << kCharBits) - 1);
    }
    if (!wildcard) hi = lo;
    return {lo, hi};
}

uint64_t encode_exact(std::string_view term, uint32_t b, std::string_view alphabet) {
    validate_keyword(term, /*allow_wildcard=*/false, alphabet);
    return encode_keyword(term, b, alphabet).lo;
}

int keyword_compare(std::string_view a, std::string_view b, std::string_view alphabet) {
    size_t n = std::max(a.size(), b.size());
    for (size_t i = 0; i < n; ++i) {
        int ra = i < a.size() ? keyword_rank(a[i], alphabet) : 0;
        int rb = i < b.size() ? keyword_rank(b[i], alphabet) : 0;
        if (ra < 0 || rb < 0)
            throw Error(Errc::InvalidKeyword, "character outside keyword alphabet in comparison");
        if (ra != rb) return ra < rb ? -1 : 1;
    }
    return 0;
}

}  // namespace rpmesh
