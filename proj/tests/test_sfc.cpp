#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "oracles/hilbert2d_reference.hpp"
#include "rpmesh/clusters.hpp"
#include "rpmesh/errors.hpp"
#include "rpmesh/hilbert.hpp"
#include "rpmesh/keyword_space.hpp"

using namespace rpmesh;

namespace {

SpaceConfig cfg_of(uint32_t d, uint32_t b) {
    SpaceConfig cfg;
    cfg.dims = d;
    cfg.bits = b;
    return cfg;
}

// Brute-force covering oracle: enumerate every cell, keep those inside the
// box, merge consecutive indices into runs.
std::vector<Segment> brute_clusters(const AxisBox& box, uint32_t dims, uint32_t bits,
                                    bool use_reference_curve) {
    std::vector<Segment> runs;
    const uint64_t total = 1ull << (dims * bits);
    const uint64_t side = 1ull << bits;
    for (uint64_t i = 0; i < total; ++i) {
        std::vector<uint64_t> p;
        if (use_reference_curve) {
            auto [x, y] = hilbert2d_reference::d2xy(side, i);
            p = {x, y};
        } else {
            p = hilbert_decode(i, dims, bits);
        }
        if (!box.contains(p)) continue;
        if (!runs.empty() && runs.back().last + 1 == i)
            runs.back().last = i;
        else
            runs.push_back({i, i});
    }
    return runs;
}

// Literal greedy coarsener: repeatedly merge across the narrowest gap
// (earliest on ties) until at most m segments remain.
std::vector<Segment> greedy_coarsen(std::vector<Segment> runs, size_t m) {
    while (runs.size() > m) {
        size_t best = 0;
        uint64_t best_gap = ~0ull;
        for (size_t i = 0; i + 1 < runs.size(); ++i) {
            uint64_t gap = runs[i + 1].first - runs[i].last - 1;
            if (gap < best_gap) {
                best_gap = gap;
                best = i;
            }
        }
        runs[best].last = runs[best + 1].last;
        runs.erase(runs.begin() + best + 1);
    }
    return runs;
}

uint64_t l1_distance(const std::vector<uint64_t>& a, const std::vector<uint64_t>& b) {
    uint64_t d = 0;
    for (size_t i = 0; i < a.size(); ++i) d += a[i] > b[i] ? a[i] - b[i] : b[i] - a[i];
    return d;
}

}  // namespace

TEST_CASE("keyword ranks follow alphabet position, case-folded") {
    CHECK(keyword_rank('a') == 1);
    CHECK(keyword_rank('z') == 26);
    CHECK(keyword_rank('0') == 27);
    CHECK(keyword_rank('9') == 36);
    CHECK(keyword_rank('.') == 37);
    CHECK(keyword_rank('-') == 38);
    CHECK(keyword_rank(':') == 39);
    CHECK(keyword_rank('A') == 1);
    CHECK(keyword_rank('Z') == 26);
    CHECK(keyword_rank('_') == -1);
    CHECK(keyword_rank('*') == -1);
    CHECK(keyword_rank(' ') == -1);
}

TEST_CASE("exact keyword encoding is positional and deterministic") {
    // two 8-bit characters at b=16
    CHECK(encode_keyword("li", 16) == KeywordInterval{3081, 3081});
    CHECK(encode_keyword("drone", 16) == KeywordInterval{1042, 1042});
    CHECK(encode_keyword("drone", 16) == encode_keyword("DrOnE", 16));
    CHECK(encode_exact("drone", 16) == 1042);
    // single character pads the second position with rank 0
    CHECK(encode_keyword("l", 16) == KeywordInterval{12u << 8, 12u << 8});
    // truncation: only the first b/8 characters matter
    CHECK(encode_keyword("lidar", 16) == encode_keyword("li", 16));
    CHECK(encode_keyword("lidar", 32).lo == ((12ull << 24) | (9ull << 16) | (4ull << 8) | 1));
}

TEST_CASE("partial and wildcard keywords open contiguous intervals") {
    CHECK(encode_keyword("*", 16) == KeywordInterval{0, 0xFFFF});
    CHECK(encode_keyword("l*", 16) == KeywordInterval{12u << 8, (12u << 8) | 0xFF});
    // stem fills the axis: the interval degenerates to the exact point
    CHECK(encode_keyword("li*", 16) == KeywordInterval{3081, 3081});
    CHECK(encode_keyword("lidar*", 16) == KeywordInterval{3081, 3081});
    CHECK(encode_keyword("li*", 32) ==
          KeywordInterval{3081ull << 16, (3081ull << 16) | 0xFFFF});
}

TEST_CASE("li* encloses exactly the li-prefixed cells at b=16") {
    KeywordInterval iv = encode_keyword("li*", 16);
    uint64_t v = encode_exact("lidar", 16);
    CHECK(iv.contains(v));
    // brute force over all 3-character strings: containment iff "li" prefix
    const std::string_view alpha = kKeywordAlphabet;
    for (char c1 : alpha)
        for (char c2 : alpha)
            for (char c3 : alpha) {
                std::string w{c1, c2, c3};
                bool inside = iv.contains(encode_exact(w, 16));
                bool prefixed = w[0] == 'l' && w[1] == 'i';
                if (inside != prefixed) {
                    CAPTURE(w);
                    REQUIRE(inside == prefixed);
                }
            }
}

TEST_CASE("prefix locality holds for random words") {
    std::mt19937_64 rng(20260814);
    const std::string_view alpha = kKeywordAlphabet;
    std::uniform_int_distribution<size_t> len_dist(1, 10);
    std::uniform_int_distribution<size_t> chr(0, alpha.size() - 1);
    for (uint32_t b : {8u, 16u, 32u, 48u}) {
        for (int iter = 0; iter < 2000; ++iter) {
            std::string w;
            size_t n = len_dist(rng);
            for (size_t i = 0; i < n; ++i) w += alpha[chr(rng)];
            size_t plen = 1 + rng() % n;
            std::string prefix = w.substr(0, plen) + "*";
            KeywordInterval iv = encode_keyword(prefix, b);
            uint64_t v = encode_exact(w, b);
            if (!iv.contains(v)) {
                CAPTURE(w);
                CAPTURE(prefix);
                CAPTURE(b);
                REQUIRE(iv.contains(v));
            }
        }
    }
}

TEST_CASE("keyword validation rejects malformed terms") {
    CHECK_THROWS_AS(encode_keyword("", 16), Error);
    CHECK_THROWS_AS(encode_keyword("l*i", 16), Error);
    CHECK_THROWS_AS(encode_keyword("a_b", 16), Error);
    CHECK_THROWS_AS(encode_keyword("x", 12), Error);  // b must be a multiple of 8
    CHECK_THROWS_AS(encode_keyword("x", 4), Error);
    CHECK_THROWS_AS(encode_exact("a*", 16), Error);  // wildcard not allowed for exact
    CHECK_NOTHROW(validate_keyword("sensor-3:temp.c"));
}

TEST_CASE("keyword order compares by alphabet rank with pad semantics") {
    CHECK(keyword_compare("a", "b") < 0);
    CHECK(keyword_compare("a", "aa") < 0);
    CHECK(keyword_compare("li", "lidar") < 0);
    CHECK(keyword_compare("lidar", "lidar") == 0);
    CHECK(keyword_compare("A", "a") == 0);
    CHECK(keyword_compare("a", "9") < 0);  // alphabet order, not ASCII order
    CHECK(keyword_compare("10", "9") < 0);
    CHECK(keyword_compare("z", "zz") < 0);
}

TEST_CASE("space config validation and handshake digest") {
    SpaceConfig good;
    CHECK_NOTHROW(good.validate());
    CHECK(good.dims == 3);
    CHECK(good.bits == 16);

    SpaceConfig bad = good;
    bad.dims = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = good;
    bad.dims = 9;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = good;
    bad.bits = 33;  // 3 * 33 > 64
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = good;
    bad.alphabet = "abca";
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = good;
    bad.alphabet = "ab*";
    CHECK_THROWS_AS(bad.validate(), Error);

    auto h = good.handshake_digest();
    CHECK(h == good.handshake_digest());
    SpaceConfig other = good;
    other.bits = 8;
    CHECK(h != other.handshake_digest());
    other = good;
    other.dims = 2;
    CHECK(h != other.handshake_digest());
    other = good;
    other.curve_tag = "hil-v2";
    CHECK(h != other.handshake_digest());
    other = good;
    other.alphabet = "abc";
    CHECK(h != other.handshake_digest());
}

TEST_CASE("2-D curve matches the independent recursive reference exhaustively") {
    for (uint32_t b = 1; b <= 6; ++b) {
        const uint64_t side = 1ull << b;
        for (uint64_t x = 0; x < side; ++x)
            for (uint64_t y = 0; y < side; ++y) {
                uint64_t want = hilbert2d_reference::xy2d(side, x, y);
                std::vector<uint64_t> p{x, y};
                uint64_t got = hilbert_encode(p, b);
                if (got != want) {
                    CAPTURE(b);
                    CAPTURE(x);
                    CAPTURE(y);
                    REQUIRE(got == want);
                }
                auto back = hilbert_decode(want, 2, b);
                if (back != p) {
                    CAPTURE(b);
                    CAPTURE(want);
                    REQUIRE(back == p);
                }
            }
    }
}

TEST_CASE("2-D curve matches the reference on random points at high order") {
    std::mt19937_64 rng(7);
    for (uint32_t b : {7u, 8u, 16u, 31u}) {
        const uint64_t side = 1ull << b;
        for (int iter = 0; iter < 500; ++iter) {
            uint64_t x = rng() & (side - 1);
            uint64_t y = rng() & (side - 1);
            uint64_t want = hilbert2d_reference::xy2d(side, x, y);
            std::vector<uint64_t> p{x, y};
            uint64_t got = hilbert_encode(p, b);
            if (got != want) {
                CAPTURE(b);
                CAPTURE(x);
                CAPTURE(y);
                REQUIRE(got == want);
            }
            auto [bx, by] = hilbert2d_reference::d2xy(side, got);
            auto back = hilbert_decode(got, 2, b);
            REQUIRE(back[0] == bx);
            REQUIRE(back[1] == by);
        }
    }
}

TEST_CASE("orientation convention is frozen") {
    // index 0 sits at the origin cell; the order-1 visit order is
    // (0,0) (0,1) (1,1) (1,0)
    CHECK(hilbert_encode(std::vector<uint64_t>{0, 0}, 1) == 0);
    CHECK(hilbert_encode(std::vector<uint64_t>{0, 1}, 1) == 1);
    CHECK(hilbert_encode(std::vector<uint64_t>{1, 1}, 1) == 2);
    CHECK(hilbert_encode(std::vector<uint64_t>{1, 0}, 1) == 3);
    CHECK(hilbert_decode(0, 2, 8) == std::vector<uint64_t>{0, 0});
    CHECK(hilbert_decode(0, 3, 8) == std::vector<uint64_t>{0, 0, 0});
}

TEST_CASE("round trip, bijectivity and adjacency hold exhaustively") {
    for (uint32_t d : {2u, 3u}) {
        for (uint32_t b = 1; b <= 6; ++b) {
            const uint64_t total = 1ull << (d * b);
            std::vector<uint64_t> prev;
            std::vector<char> seen(total, 0);
            for (uint64_t i = 0; i < total; ++i) {
                auto p = hilbert_decode(i, d, b);
                uint64_t back = hilbert_encode(p, b);
                if (back != i) {
                    CAPTURE(d);
                    CAPTURE(b);
                    CAPTURE(i);
                    REQUIRE(back == i);
                }
                REQUIRE_FALSE(seen[i]);
                seen[i] = 1;
                if (i > 0) {
                    uint64_t step = l1_distance(prev, p);
                    if (step != 1) {
                        CAPTURE(d);
                        CAPTURE(b);
                        CAPTURE(i);
                        REQUIRE(step == 1);
                    }
                }
                prev = std::move(p);
            }
        }
    }
}

TEST_CASE("round trip holds on random points for b = 7, 8 and d up to 8") {
    std::mt19937_64 rng(99);
    for (uint32_t d : {2u, 3u, 4u, 6u, 8u}) {
        for (uint32_t b : {7u, 8u}) {
            if (d * b > 64) continue;
            const uint64_t mask = (1ull << b) - 1;
            for (int iter = 0; iter < 300; ++iter) {
                std::vector<uint64_t> p(d);
                for (auto& v : p) v = rng() & mask;
                uint64_t i = hilbert_encode(p, b);
                REQUIRE(hilbert_decode(i, d, b) == p);
            }
        }
    }
}

TEST_CASE("1-D curve is the identity") {
    for (uint64_t v : {0ull, 1ull, 2ull, 255ull, 65535ull}) {
        CHECK(hilbert_encode(std::vector<uint64_t>{v}, 16) == v);
        CHECK(hilbert_decode(v, 1, 16) == std::vector<uint64_t>{v});
    }
    CHECK(hilbert_encode(std::vector<uint64_t>{~0ull}, 64) == ~0ull);
}

TEST_CASE("aligned index blocks cover exact subcubes (dyadic nesting)") {
    for (uint32_t d : {2u, 3u}) {
        const uint32_t b = 3;
        for (uint32_t level = 1; level <= b; ++level) {
            const uint64_t block = 1ull << (d * level);
            const uint64_t total = 1ull << (d * b);
            for (uint64_t first = 0; first < total; first += block) {
                std::vector<uint64_t> lo(d, ~0ull), hi(d, 0);
                for (uint64_t i = first; i < first + block; ++i) {
                    auto p = hilbert_decode(i, d, b);
                    for (uint32_t a = 0; a < d; ++a) {
                        lo[a] = std::min(lo[a], p[a]);
                        hi[a] = std::max(hi[a], p[a]);
                    }
                }
                for (uint32_t a = 0; a < d; ++a) {
                    REQUIRE(hi[a] - lo[a] + 1 == (1ull << level));
                    REQUIRE(lo[a] % (1ull << level) == 0);
                }
            }
        }
    }
}

TEST_CASE("curve rejects invalid geometry and out-of-range input") {
    CHECK_THROWS_AS(hilbert_encode(std::vector<uint64_t>{}, 4), Error);
    CHECK_THROWS_AS(hilbert_encode(std::vector<uint64_t>(9, 0), 4), Error);
    CHECK_THROWS_AS(hilbert_encode(std::vector<uint64_t>{0, 0}, 0), Error);
    CHECK_THROWS_AS(hilbert_encode(std::vector<uint64_t>{0, 0, 0}, 22), Error);  // 66 bits
    CHECK_THROWS_AS(hilbert_encode(std::vector<uint64_t>{4, 0}, 2), Error);      // 4 >= 2^2
    CHECK_THROWS_AS(hilbert_decode(16, 2, 2), Error);  // 16 >= 2^4
    CHECK_THROWS_AS(hilbert_decode(0, 0, 4), Error);
    CHECK_NOTHROW(hilbert_decode(15, 2, 2));
}

TEST_CASE("trivial cluster shapes") {
    SpaceConfig cfg = cfg_of(2, 4);
    // whole-grid box is one curve segment
    AxisBox full{{{0, 15}, {0, 15}}};
    auto segs = clusters_for_box(full, cfg);
    REQUIRE(segs.size() == 1);
    CHECK(segs[0] == Segment{0, 255});
    // single cell is one degenerate segment
    AxisBox cell{{{5, 5}, {9, 9}}};
    uint64_t idx = hilbert_encode(std::vector<uint64_t>{5, 9}, 4);
    segs = clusters_for_box(cell, cfg);
    REQUIRE(segs.size() == 1);
    CHECK(segs[0] == Segment{idx, idx});
}

TEST_CASE("column box on the 4x4 grid equals brute force") {
    SpaceConfig cfg = cfg_of(2, 2);
    AxisBox col{{{0, 0}, {0, 3}}};
    auto got = clusters_for_box(col, cfg);
    auto want = brute_clusters(col, 2, 2, /*use_reference_curve=*/true);
    CHECK(got == want);
}

TEST_CASE("exact coverings equal brute force on all 2-D rectangles") {
    for (uint32_t b : {1u, 2u, 3u}) {
        SpaceConfig cfg = cfg_of(2, b);
        const uint64_t side = 1ull << b;
        for (uint64_t x0 = 0; x0 < side; ++x0)
            for (uint64_t x1 = x0; x1 < side; ++x1)
                for (uint64_t y0 = 0; y0 < side; ++y0)
                    for (uint64_t y1 = y0; y1 < side; ++y1) {
                        AxisBox box{{{x0, x1}, {y0, y1}}};
                        auto got = clusters_for_box(box, cfg);
                        auto want = brute_clusters(box, 2, b, true);
                        if (got != want) {
                            CAPTURE(b);
                            CAPTURE(x0);
                            CAPTURE(x1);
                            CAPTURE(y0);
                            CAPTURE(y1);
                            REQUIRE(got == want);
                        }
                    }
    }
}

TEST_CASE("exact coverings equal brute force on all 3-D boxes of a 4^3 grid") {
    SpaceConfig cfg = cfg_of(3, 2);
    const uint64_t side = 4;
    std::vector<KeywordInterval> ivs;
    for (uint64_t lo = 0; lo < side; ++lo)
        for (uint64_t hi = lo; hi < side; ++hi) ivs.push_back({lo, hi});
    for (const auto& ax : ivs)
        for (const auto& ay : ivs)
            for (const auto& az : ivs) {
                AxisBox box{{ax, ay, az}};
                auto got = clusters_for_box(box, cfg);
                auto want = brute_clusters(box, 3, 2, false);
                if (got != want) {
                    CAPTURE(ax.lo);
                    CAPTURE(ax.hi);
                    REQUIRE(got == want);
                }
            }
}

TEST_CASE("coarsening matches the literal greedy merge") {
    SpaceConfig cfg = cfg_of(2, 3);
    const uint64_t side = 8;
    for (uint64_t x0 = 0; x0 < side; ++x0)
        for (uint64_t x1 = x0; x1 < side; ++x1)
            for (uint64_t y0 = 0; y0 < side; ++y0)
                for (uint64_t y1 = y0; y1 < side; ++y1) {
                    AxisBox box{{{x0, x1}, {y0, y1}}};
                    auto exact = clusters_for_box(box, cfg);
                    for (size_t m : {1u, 2u, 3u, 5u}) {
                        auto got = clusters_for_box(box, cfg, m);
                        auto want = greedy_coarsen(exact, m);
                        if (got != want) {
                            CAPTURE(x0);
                            CAPTURE(x1);
                            CAPTURE(y0);
                            CAPTURE(y1);
                            CAPTURE(m);
                            REQUIRE(got == want);
                        }
                        REQUIRE(got.size() <= m);
                    }
                }
}

TEST_CASE("coarsened coverings are supersets of the exact covering") {
    std::mt19937_64 rng(41);
    SpaceConfig cfg = cfg_of(2, 4);
    for (int iter = 0; iter < 200; ++iter) {
        uint64_t x0 = rng() & 15, x1 = x0 + (rng() % (16 - x0));
        uint64_t y0 = rng() & 15, y1 = y0 + (rng() % (16 - y0));
        AxisBox box{{{x0, x1}, {y0, y1}}};
        auto exact = clusters_for_box(box, cfg);
        auto coarse = clusters_for_box(box, cfg, 2);
        for (const Segment& e : exact) {
            bool covered = std::any_of(coarse.begin(), coarse.end(), [&](const Segment& c) {
                return c.first <= e.first && e.last <= c.last;
            });
            REQUIRE(covered);
        }
    }
}

TEST_CASE("budgeted coverings stay small and cover large boxes") {
    SpaceConfig cfg = cfg_of(3, 16);
    std::mt19937_64 rng(13);
    // one exact axis, two wide axes: the exact covering would be enormous
    AxisBox box{{{1042, 1042}, {3072, 3327}, {0, 0xFFFF}}};
    auto segs = clusters_for_box(box, cfg, 16);
    REQUIRE(!segs.empty());
    REQUIRE(segs.size() <= 16);
    for (size_t i = 0; i + 1 < segs.size(); ++i) {
        REQUIRE(segs[i].first <= segs[i].last);
        REQUIRE(segs[i].last + 1 < segs[i + 1].first);
    }
    // every sampled cell of the box is covered by some segment
    for (int iter = 0; iter < 2000; ++iter) {
        std::vector<uint64_t> p{1042, 3072 + rng() % 256, rng() & 0xFFFF};
        uint64_t idx = hilbert_encode(p, 16);
        bool covered = std::any_of(segs.begin(), segs.end(),
                                   [&](const Segment& s) { return s.contains(idx); });
        if (!covered) {
            CAPTURE(p[1]);
            CAPTURE(p[2]);
            REQUIRE(covered);
        }
    }
}

TEST_CASE("cluster input validation") {
    SpaceConfig cfg = cfg_of(2, 4);
    CHECK_THROWS_AS(clusters_for_box(AxisBox{{{0, 1}}}, cfg), Error);  // wrong arity
    CHECK_THROWS_AS(clusters_for_box(AxisBox{{{2, 1}, {0, 1}}}, cfg), Error);
    CHECK_THROWS_AS(clusters_for_box(AxisBox{{{0, 16}, {0, 1}}}, cfg), Error);
}

TEST_CASE("golden vectors pin the frozen curve convention") {
    int files = 0;
    for (uint32_t d : {2u, 3u}) {
        for (uint32_t b = 1; b <= 4; ++b) {
            std::ostringstream name;
            name << RPMESH_TESTDATA << "/hilbert_d" << d << "_b" << b << ".txt";
            std::ifstream in(name.str());
            REQUIRE_MESSAGE(in.good(), "missing golden file " << name.str());
            ++files;
            std::string line;
            uint64_t lines = 0;
            while (std::getline(in, line)) {
                if (line.empty() || line[0] == '#') continue;
                std::istringstream ls(line);
                std::vector<uint64_t> p(d);
                std::string arrow;
                uint64_t index = 0;
                for (auto& v : p) ls >> v;
                ls >> arrow >> index;
                REQUIRE(arrow == "->");
                uint64_t got = hilbert_encode(p, b);
                if (got != index) {
                    CAPTURE(name.str());
                    CAPTURE(line);
                    REQUIRE(got == index);
                }
                ++lines;
            }
            REQUIRE(lines == 1ull << (d * b));
        }
    }
    CHECK(files == 8);
}
