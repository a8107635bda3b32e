// Rule engine: condition grammar, evaluation semantics, single-fire cycle
// selection, rule files — checked against the independent generator oracle.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "oracles/rules_oracle.hpp"
#include "rpmesh/errors.hpp"
#include "rpmesh/rules.hpp"

using namespace rpmesh;
using namespace rpmesh::testing;

namespace {

Rule make_rule(const std::string& name, int priority, const std::string& cond) {
    Rule r;
    r.name = name;
    r.priority = priority;
    r.when = Condition::parse(cond);
    r.then.kind = Consequence::Kind::LocalCallback;
    r.then.callback_id = name;
    return r;
}

}  // namespace

TEST_CASE("threshold rule fires above the threshold and not below") {
    RuleEngine eng;
    std::vector<std::string> fired;
    eng.set_dispatcher([&](const Rule& r, const DataTuple&) { fired.push_back(r.name); });
    eng.add_rule(make_rule("post-processing", 0, "IF(RESULT >= 10)"));

    auto hit = eng.evaluate_cycle(DataTuple{{"RESULT", int64_t(12)}});
    CHECK(hit.fired_index == 0);
    CHECK(fired == std::vector<std::string>{"post-processing"});

    auto miss = eng.evaluate_cycle(DataTuple{{"RESULT", int64_t(9)}});
    CHECK(!miss.fired_index.has_value());
    CHECK(miss.conflict_set.empty());
    CHECK(fired.size() == 1);
    CHECK(eng.stats().cycles == 2);
    CHECK(eng.stats().fired == 1);
}

TEST_CASE("constant and compound conditions") {
    CHECK(Condition::parse("IF(true)").evaluate({}));
    CHECK(!Condition::parse("IF(false)").evaluate({}));
    CHECK(!Condition::parse("IF(NOT true)").evaluate({}));

    Condition c = Condition::parse("IF(RESULT >= 10 AND QUALITY == \"low\")");
    CHECK(c.evaluate({{"RESULT", int64_t(12)}, {"QUALITY", std::string("low")}}));
    CHECK(!c.evaluate({{"RESULT", int64_t(12)}, {"QUALITY", std::string("high")}}));
    CHECK(!c.evaluate({{"RESULT", int64_t(9)}, {"QUALITY", std::string("low")}}));
}

TEST_CASE("precedence: comparison binds tighter than NOT, AND tighter than OR") {
    DataTuple t{{"A", int64_t(1)}, {"B", int64_t(2)}};
    CHECK(Condition::parse("IF(NOT A > B)").evaluate(t));          // NOT (1 > 2)
    CHECK(Condition::parse("IF(false AND false OR true)").evaluate(t));
    CHECK(!Condition::parse("IF(false AND (false OR true))").evaluate(t));
    CHECK(Condition::parse("IF((A < B) == true)").evaluate(t));    // boolean operand
}

TEST_CASE("numeric comparison: int/int exact, int/double promoted") {
    DataTuple t{{"I", int64_t(3)}, {"D", 3.5}};
    CHECK(Condition::parse("IF(I == 3)").evaluate(t));
    CHECK(Condition::parse("IF(D > 3)").evaluate(t));
    CHECK(Condition::parse("IF(D == 3.5)").evaluate(t));
    CHECK(Condition::parse("IF(I < 3.5)").evaluate(t));
    CHECK(Condition::parse("IF(-2 < I)").evaluate(t));
}

TEST_CASE("parse errors carry a character offset") {
    auto offset_of = [](const std::string& text) -> std::string {
        try {
            Condition::parse(text);
        } catch (const Error& e) {
            CHECK(e.code() == Errc::ParseError);
            return e.what();
        }
        return "(no error)";
    };
    CHECK(offset_of("RESULT >= 10").find("expected IF") != std::string::npos);
    CHECK(offset_of("IF(RESULT >=)").find("offset 12") != std::string::npos);
    CHECK(offset_of("IF(RESULT >= 10").find("expected ')'") != std::string::npos);
    CHECK(offset_of("IF(RESULT >= 10))").find("trailing") != std::string::npos);
    CHECK(offset_of("IF(RESULT ! 10)").find("stray '!'") != std::string::npos);
    CHECK(offset_of("IF(Q == \"unterminated)").find("unterminated") != std::string::npos);
}

TEST_CASE("evaluation errors: type mismatches and unknown fields") {
    DataTuple t{{"S", std::string("x")}, {"I", int64_t(1)}, {"B", true}};
    CHECK_THROWS_AS(Condition::parse("IF(S > 5)").evaluate(t), Error);
    CHECK_THROWS_AS(Condition::parse("IF(B < true)").evaluate(t), Error);
    CHECK_THROWS_AS(Condition::parse("IF(MISSING == 1)").evaluate(t), Error);
    CHECK_THROWS_AS(Condition::parse("IF(I)").evaluate(t), Error);        // non-boolean root
    CHECK_THROWS_AS(Condition::parse("IF(NOT I)").evaluate(t), Error);
    CHECK_THROWS_AS(Condition::parse("IF(I AND true)").evaluate(t), Error);
    CHECK_THROWS_AS(Condition::parse("IF(S == 5)").evaluate(t), Error);   // == still typed
    CHECK(Condition::parse("IF(B == true)").evaluate(t));

    // No short-circuit: an error on the right poisons a false AND.
    CHECK_THROWS_AS(Condition::parse("IF(false AND MISSING == 1)").evaluate(t), Error);

    try {
        Condition::parse("IF(S > 5)").evaluate(t);
    } catch (const Error& e) {
        CHECK(e.code() == Errc::EvalError);
    }
}

TEST_CASE("a cycle treats erroring conditions as unsatisfied") {
    RuleEngine eng;
    eng.add_rule(make_rule("broken", 0, "IF(NO_SUCH_FIELD == 1)"));
    eng.add_rule(make_rule("good", 1, "IF(RESULT > 0)"));
    auto res = eng.evaluate_cycle(DataTuple{{"RESULT", int64_t(5)}});
    CHECK(res.conflict_set == std::vector<size_t>{1});
    CHECK(res.fired_index == 1);
    CHECK(eng.stats().eval_errors == 1);
}

TEST_CASE("exactly one rule fires: lowest priority value, ties by declaration order") {
    RuleEngine eng;
    std::vector<std::string> fired;
    eng.set_dispatcher([&](const Rule& r, const DataTuple&) { fired.push_back(r.name); });
    eng.add_rule(make_rule("later-high", 1, "IF(X > 0)"));
    eng.add_rule(make_rule("winner", 0, "IF(X > 0)"));
    eng.add_rule(make_rule("tied-with-winner", 0, "IF(X > 0)"));

    auto res = eng.evaluate_cycle(DataTuple{{"X", int64_t(1)}});
    CHECK(res.conflict_set.size() == 3);
    CHECK(res.fired_index == 1);  // priority 0, declared before the tied rule
    CHECK(fired == std::vector<std::string>{"winner"});
}

TEST_CASE("a throwing dispatcher counts as fired, reported, never retried") {
    RuleEngine eng;
    int calls = 0;
    eng.set_dispatcher([&](const Rule&, const DataTuple&) {
        ++calls;
        throw std::runtime_error("dispatch sink offline");
    });
    eng.add_rule(make_rule("r", 0, "IF(true)"));
    auto res = eng.evaluate_cycle(DataTuple{});
    CHECK(res.fired_index == 0);
    CHECK(!res.dispatch_ok);
    CHECK(calls == 1);
    CHECK(eng.stats().fired == 1);
    CHECK(eng.stats().dispatch_failures == 1);
}

TEST_CASE("time-bound and content rules compose under single-fire") {
    RuleEngine eng;
    std::vector<std::string> fired;
    eng.set_dispatcher([&](const Rule& r, const DataTuple&) { fired.push_back(r.name); });
    eng.add_rule(make_rule("deadline", 0, "IF(ELAPSED_MS > 100)"));
    eng.add_rule(make_rule("content", 1, "IF(RESULT >= 10)"));

    DataTuple t{{"RESULT", int64_t(12)}};
    auto fresh = eng.evaluate_cycle(t, 50);
    CHECK(fresh.fired_index == 1);  // only the content rule is satisfied
    auto late = eng.evaluate_cycle(t, 150);
    CHECK(late.conflict_set.size() == 2);
    CHECK(late.fired_index == 0);  // deadline outranks content
    CHECK(fired == std::vector<std::string>{"content", "deadline"});
}

TEST_CASE("randomized conditions agree with the generation-side truth") {
    std::mt19937_64 rng(20260814);
    ExprGen gen(rng);

    const int kRules = 12;
    std::vector<GenExpr> exprs;
    std::vector<int> priorities;
    RuleEngine eng;
    size_t dispatched = 0;
    eng.set_dispatcher([&](const Rule&, const DataTuple&) { ++dispatched; });
    for (int i = 0; i < kRules; ++i) {
        exprs.push_back(gen.gen());
        priorities.push_back(int(rng() % 4));
        eng.add_rule(make_rule("r" + std::to_string(i), priorities.back(),
                               "IF(" + exprs.back().text + ")"));
    }

    size_t mismatches = 0, error_conditions = 0, fired_total = 0;
    for (int round = 0; round < 10000; ++round) {
        OracleTuple ot = random_tuple(rng);
        DataTuple t(ot.begin(), ot.end());  // same variant layout

        std::vector<size_t> expect_set;
        std::vector<bool> satisfied(kRules, false);
        for (int i = 0; i < kRules; ++i) {
            auto truth = exprs[i].truth(ot);
            if (!truth) ++error_conditions;
            satisfied[i] = truth.value_or(false);
            if (satisfied[i]) expect_set.push_back(i);
        }
        auto res = eng.evaluate_cycle(t);
        if (res.conflict_set != expect_set) ++mismatches;
        if (res.fired_index != expected_fired(priorities, satisfied)) ++mismatches;
        if (res.fired_index) ++fired_total;

        if (round == 0) {  // determinism spot check
            auto again = eng.evaluate_cycle(t);
            CHECK(again.conflict_set == res.conflict_set);
            CHECK(again.fired_index == res.fired_index);
        }
    }
    CHECK(mismatches == 0);
    CHECK(dispatched == eng.stats().fired);
    CHECK(fired_total > 100);         // the generator produced live rules
    CHECK(error_conditions > 100);    // and error paths
    CHECK(eng.stats().eval_errors > 0);
}

TEST_CASE("rule files parse into engine-ready rules") {
    const char* text =
        "# reactions for the post-processing pipeline\n"
        "name: trigger-post-processing\n"
        "priority: 0\n"
        "when: IF(RESULT >= 10)\n"
        "then: post start_function func:post-processing\n"
        "\n"
        "priority: 2\n"
        "when: IF(QUALITY == \"low\")   # drop low quality\n"
        "then: callback discard\n";

    auto rules = parse_rule_file(text);
    REQUIRE(rules.size() == 2);
    CHECK(rules[0].name == "trigger-post-processing");
    CHECK(rules[0].priority == 0);
    CHECK(rules[0].then.kind == Consequence::Kind::PostMessage);
    CHECK(rules[0].then.message.action == Action::START_FUNCTION);
    CHECK(rules[0].then.message.profile.text() == "func:post-processing");
    CHECK(rules[1].name == "rule1");
    CHECK(rules[1].then.kind == Consequence::Kind::LocalCallback);
    CHECK(rules[1].then.callback_id == "discard");
    CHECK(rules[1].when.evaluate({{"QUALITY", std::string("low")}}));

    RuleEngine eng;
    eng.replace_rules(parse_rule_file(text));
    CHECK(eng.rules().size() == 2);
    eng.replace_rules({});
    CHECK(eng.rules().empty());
}

TEST_CASE("malformed rule files report the offending line") {
    auto error_of = [](const char* text) -> std::string {
        try {
            parse_rule_file(text);
        } catch (const Error& e) {
            CHECK(e.code() == Errc::ParseError);
            return e.what();
        }
        return "(no error)";
    };
    CHECK(error_of("priority: 0\nthen: callback x\n").find("lacks 'when:'") != std::string::npos);
    CHECK(error_of("when: IF(true)\n").find("lacks 'then:'") != std::string::npos);
    CHECK(error_of("when: IF(true)\nthen: explode\n").find("unknown consequence") !=
          std::string::npos);
    CHECK(error_of("when: IF(true)\nthen: post bogus_action a:1\n").find("unknown action") !=
          std::string::npos);
    CHECK(error_of("priority: fast\nwhen: IF(true)\nthen: callback x\n").find("line 1") !=
          std::string::npos);
    CHECK(error_of("just some text\n").find("line 1") != std::string::npos);
}

TEST_CASE("tuples render to text and back") {
    DataTuple t = parse_data_tuple("RESULT=12,QUALITY=\"low\",RATIO=3.5,ACTIVE=true,NAME=plain");
    CHECK(std::get<int64_t>(t.at("RESULT")) == 12);
    CHECK(std::get<std::string>(t.at("QUALITY")) == "low");
    CHECK(std::get<double>(t.at("RATIO")) == 3.5);
    CHECK(std::get<bool>(t.at("ACTIVE")) == true);
    CHECK(std::get<std::string>(t.at("NAME")) == "plain");

    DataTuple again = parse_data_tuple(data_tuple_text(t));
    CHECK(again == t);

    CHECK_THROWS_AS(parse_data_tuple("novalue"), Error);
    CHECK_THROWS_AS(parse_data_tuple("=5"), Error);
    CHECK_THROWS_AS(parse_data_tuple("A=1,A=2"), Error);
}
