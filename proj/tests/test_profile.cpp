#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "oracles/matching_oracle.hpp"
#include "rpmesh/ar_message.hpp"
#include "rpmesh/errors.hpp"
#include "rpmesh/keyword_space.hpp"
#include "rpmesh/matching.hpp"
#include "rpmesh/profile.hpp"

using namespace rpmesh;

TEST_CASE("profile text parses into typed terms and round-trips") {
    Profile p = Profile::parse("Drone, Li*, lat:40.0583, long:-74*, t:05..20, any:*");
    REQUIRE(p.terms.size() == 6);
    CHECK(p.terms[0] == Term{TermKind::AttributeOnly, "drone", "", "", ""});
    CHECK(p.terms[1] == Term{TermKind::AttributeOnly, "li*", "", "", ""});
    CHECK(p.terms[2] == Term{TermKind::Exact, "lat", "40.0583", "", ""});
    CHECK(p.terms[3] == Term{TermKind::Partial, "long", "-74*", "", ""});
    CHECK(p.terms[4] == Term{TermKind::Range, "t", "", "05", "20"});
    CHECK(p.terms[5] == Term{TermKind::Wildcard, "any", "", "", ""});
    CHECK(p.text() == "drone,li*,lat:40.0583,long:-74*,t:05..20,any:*");
    CHECK(Profile::parse(p.text()) == p);

    CHECK(Profile::parse("").terms.empty());
    CHECK(Profile::parse("*").terms[0].attribute == "*");
    // values keep any colon after the first separator
    CHECK(Profile::parse("k:a:b").terms[0] == Term{TermKind::Exact, "k", "a:b", "", ""});
}

TEST_CASE("profile parse rejects malformed terms") {
    CHECK_THROWS_AS(Profile::parse("a:"), Error);
    CHECK_THROWS_AS(Profile::parse("a,,b"), Error);
    CHECK_THROWS_AS(Profile::parse(",a"), Error);
    CHECK_THROWS_AS(Profile::parse("a:*x"), Error);
    CHECK_THROWS_AS(Profile::parse("a:9..5"), Error);    // lo > hi
    CHECK_THROWS_AS(Profile::parse("a:1..2*"), Error);   // wildcard in range
    CHECK_THROWS_AS(Profile::parse("sp ace"), Error);
    CHECK_NOTHROW(Profile::parse("a:5..5"));
}

TEST_CASE("profile binary encoding round-trips") {
    Profile p = Profile::parse("drone,li*,lat:40.0583,t:05..20,any:*,plain");
    Bytes b = p.encode();
    CHECK(Profile::decode(b) == p);
    CHECK(Profile::parse("").encode().size() == 2);
    CHECK(Profile::decode(Profile::parse("").encode()).terms.empty());
    // deterministic bytes: equal profiles encode identically
    CHECK(Profile::parse("Drone,LI*").encode() == Profile::parse("drone,li*").encode());
    Bytes trailing = b;
    trailing.push_back(0);
    CHECK_THROWS_AS(Profile::decode(trailing), Error);
}

TEST_CASE("simple profiles map to points, anything else to boxes") {
    SpaceConfig cfg;
    cfg.dims = 2;

    Target t = profile_to_target(Profile::parse("drone,lidar"), cfg);
    CHECK(t.is_point);
    REQUIRE(t.point.size() == 2);
    CHECK(t.point[0] == encode_exact("drone", 16));
    CHECK(t.point[1] == encode_exact("lidar", 16));

    t = profile_to_target(Profile::parse("drone,li*"), cfg);
    CHECK_FALSE(t.is_point);
    CHECK(t.box.axes[0] == encode_keyword("drone", 16));
    CHECK(t.box.axes[1] == encode_keyword("li*", 16));

    t = profile_to_target(Profile::parse(""), cfg);
    CHECK_FALSE(t.is_point);
    CHECK(t.box.axes[0] == KeywordInterval{0, 0xFFFF});
    CHECK(t.box.axes[1] == KeywordInterval{0, 0xFFFF});

    // missing trailing dimension = bare wildcard
    t = profile_to_target(Profile::parse("drone"), cfg);
    CHECK_FALSE(t.is_point);
    CHECK(t.box.axes[0].degenerate());
    CHECK(t.box.axes[1] == KeywordInterval{0, 0xFFFF});

    // exact pairs routed on the concatenated term text are still simple
    t = profile_to_target(Profile::parse("type:drone,name:lidar"), cfg);
    CHECK(t.is_point);
    CHECK(t.point[0] == encode_exact("type:drone", 16));

    CHECK_THROWS_AS(profile_to_target(Profile::parse("a,b,c"), cfg), Error);
}

TEST_CASE("range terms route through their endpoint encodings") {
    SpaceConfig cfg;
    cfg.dims = 1;
    cfg.bits = 32;
    Target t = profile_to_target(Profile::parse("t:05..20"), cfg);
    CHECK_FALSE(t.is_point);
    KeywordInterval iv = t.box.axes[0];
    CHECK(iv.lo == encode_keyword("t:05", 32).lo);
    CHECK(iv.hi == encode_keyword("t:20", 32).hi);
    CHECK(iv.contains(encode_exact("t:07", 32)));
    CHECK(iv.contains(encode_exact("t:15", 32)));
    CHECK(iv.contains(encode_exact("t:1", 32)));
    CHECK_FALSE(iv.contains(encode_exact("t:30", 32)));
    CHECK_FALSE(iv.contains(encode_exact("t:00", 32)));
}

TEST_CASE("message quintuplet encodes and decodes") {
    ARMessage m;
    m.profile = Profile::parse("drone,li*");
    m.credentials = to_bytes("token");
    m.action = Action::NOTIFY_DATA;
    m.data = to_bytes("payload bytes");
    m.location = GeoPoint{40.0583, -74.4056};
    m.function = FunctionRef{"post_processing_func", to_bytes("{\"argv\":[\"wc\"]}"), "argv-v1"};

    Bytes b = m.encode();
    ARMessage back = ARMessage::decode(b);
    CHECK(back == m);

    ARMessage bare;
    bare.profile = Profile::parse("x");
    bare.action = Action::STORE;
    CHECK(ARMessage::decode(bare.encode()) == bare);
    CHECK(bare.content_digest() == ARMessage::decode(bare.encode()).content_digest());
    CHECK(bare.content_digest() != m.content_digest());

    // missing mandatory fields rejected
    CHECK_THROWS_AS(ARMessage::decode(Bytes{}), Error);
    // oversized single field rejected at encode time
    ARMessage big = bare;
    big.data.resize(70000);
    CHECK_THROWS_AS(big.encode(), Error);
    // bad action byte rejected
    Bytes evil = bare.encode();
    for (size_t i = 0; i + 3 < evil.size(); ++i)
        if (evil[i] == 3 && evil[i + 1] == 0 && evil[i + 2] == 1) {
            evil[i + 3] = 99;
            break;
        }
    CHECK_THROWS_AS(ARMessage::decode(evil), Error);
}

TEST_CASE("action names round-trip") {
    for (Action a : {Action::STORE, Action::STATISTICS, Action::STORE_FUNCTION,
                     Action::START_FUNCTION, Action::STOP_FUNCTION, Action::NOTIFY_INTEREST,
                     Action::NOTIFY_DATA, Action::DELETE})
        CHECK(action_from_name(action_name(a)) == a);
    CHECK(action_from_name("store-function") == Action::STORE_FUNCTION);
    CHECK_FALSE(action_from_name("explode").has_value());
}

TEST_CASE("matching agrees with the listing examples") {
    Profile stored = Profile::parse("Drone,LiDAR,lat:40.0583,long:-74.4056");
    Profile query = Profile::parse("Drone,Li*,lat:40*,long:-74*");
    CHECK(matches(stored, query));
    CHECK(matches(stored, Profile::parse("")));
    CHECK_FALSE(matches(stored, Profile::parse("Drone,Radar")));
    CHECK_FALSE(matches(Profile::parse(""), Profile::parse("drone")));
}

TEST_CASE("matching is symmetric about wildcard position") {
    CHECK(matches(Profile::parse("t:*"), Profile::parse("t:5")));
    CHECK(matches(Profile::parse("t:5"), Profile::parse("t:*")));
    CHECK(matches(Profile::parse("t:5"), Profile::parse("t")));
    CHECK_FALSE(matches(Profile::parse("t"), Profile::parse("t:5")));  // no stored value
    CHECK(matches(Profile::parse("li*"), Profile::parse("lidar")));
    CHECK(matches(Profile::parse("lidar"), Profile::parse("li*")));
    CHECK(matches(Profile::parse("*"), Profile::parse("anything")));
    CHECK_FALSE(matches(Profile::parse(""), Profile::parse("*")));
}

TEST_CASE("range matching uses positional order on full strings") {
    CHECK(matches(Profile::parse("t:15"), Profile::parse("t:05..20")));
    CHECK_FALSE(matches(Profile::parse("t:25"), Profile::parse("t:05..20")));
    CHECK(matches(Profile::parse("t:05..20"), Profile::parse("t:15")));
    CHECK(matches(Profile::parse("t:05..20"), Profile::parse("t:1*")));
    CHECK(matches(Profile::parse("t:05..20"), Profile::parse("t:10..30")));
    CHECK_FALSE(matches(Profile::parse("t:05..20"), Profile::parse("t:21..30")));
    // untruncated comparison: these differ far beyond the b=16 axis width
    CHECK_FALSE(
        matches(Profile::parse("k:aaaaaaaaz"), Profile::parse("k:aaaaaaaaa..aaaaaaaab")));
    CHECK(matches(Profile::parse("k:aaaaaaaab"), Profile::parse("k:aaaaaaaaa..aaaaaaaac")));
}

TEST_CASE("matching equals the enumeration oracle on random profiles") {
    auto uni = matching_oracle::universe("abc", 4);
    std::mt19937_64 rng(20260814);
    std::uniform_int_distribution<int> nterms(1, 4), kind(0, 4), slen(1, 3), chr(0, 2);

    auto rand_str = [&] {
        std::string s;
        int n = slen(rng);
        for (int i = 0; i < n; ++i) s += static_cast<char>('a' + chr(rng));
        return s;
    };
    auto rand_term = [&] {
        Term t;
        switch (kind(rng)) {
            case 0:
                t.kind = TermKind::AttributeOnly;
                t.attribute = rng() % 4 == 0 ? (rng() % 4 == 0 ? "*" : rand_str() + "*")
                                             : rand_str();
                break;
            case 1:
                t.kind = TermKind::Exact;
                t.attribute = rand_str();
                t.value = rand_str();
                break;
            case 2:
                t.kind = TermKind::Partial;
                t.attribute = rand_str();
                t.value = rand_str() + "*";
                break;
            case 3:
                t.kind = TermKind::Wildcard;
                t.attribute = rand_str();
                break;
            default: {
                t.kind = TermKind::Range;
                t.attribute = rand_str();
                std::string lo = rand_str(), hi = rand_str();
                if (keyword_compare(lo, hi) > 0) std::swap(lo, hi);
                t.lo = lo;
                t.hi = hi;
            }
        }
        return t;
    };
    auto rand_profile = [&] {
        Profile p;
        int n = nterms(rng);
        for (int i = 0; i < n; ++i) p.terms.push_back(rand_term());
        return p;
    };

    int disagreements = 0;
    for (int iter = 0; iter < 20000; ++iter) {
        Profile stored = rand_profile();
        Profile query = rand_profile();
        bool got = matches(stored, query);
        bool want = matching_oracle::matches(stored, query, uni);
        if (got != want) {
            ++disagreements;
            CAPTURE(stored.text());
            CAPTURE(query.text());
            CHECK(got == want);
            if (disagreements > 3) break;
        }
    }
    CHECK(disagreements == 0);
}
