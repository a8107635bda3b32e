#pragma once

// Content-driven IF-THEN rules: each incoming data tuple runs one evaluation
// cycle that computes the conflict set (every rule whose condition holds) and
// fires at most one rule — lowest priority value wins, declaration order
// breaks ties. Rules stay active across cycles.
//
// Condition grammar (case-insensitive keywords; fields case-sensitive):
//
//   condition := "IF" "(" expr ")"
//   expr      := and_expr ("OR" and_expr)*
//   and_expr  := unary ("AND" unary)*
//   unary     := "NOT" unary | relation
//   relation  := operand (("<"|"<="|">"|">="|"=="|"!=") operand)?
//   operand   := "(" expr ")" | literal | field
//   literal   := integer | decimal | "string" | true | false
//
// Evaluation semantics: int/int compares exactly, int/double as double,
// strings lexicographically; booleans support == and != only. A cross-family
// comparison, an unknown field, or a non-boolean condition result raises
// EvalError. Both comparison operands are always evaluated (no
// short-circuit), so an error anywhere poisons the whole condition; during a
// cycle a poisoned condition simply stays out of the conflict set and is
// counted in stats().eval_errors.
//
// Time-based conditions use the ELAPSED_MS field (milliseconds since tuple
// ingest) injected by the evaluate_cycle overload taking elapsed_ms.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "rpmesh/ar_message.hpp"

namespace rpmesh {

using Value = std::variant<int64_t, double, std::string, bool>;
using DataTuple = std::map<std::string, Value>;

// "k=v,k2=v2" with values classified as integer, decimal, boolean, or string
// (optionally double-quoted). ParseError on malformed input or empty names.
DataTuple parse_data_tuple(std::string_view text);
std::string data_tuple_text(const DataTuple& t);

struct Expr;  // AST node, internal

class Condition {
  public:
    // Throws ParseError (with character offset) on malformed text.
    static Condition parse(std::string_view text);

    // Throws EvalError on type errors, unknown fields, or a non-boolean root.
    bool evaluate(const DataTuple& t) const;

    const std::string& text() const { return text_; }

  private:
    std::string text_;
    std::shared_ptr<const Expr> root_;
};

inline Condition parse_condition(std::string_view text) { return Condition::parse(text); }

struct Consequence {
    enum class Kind { PostMessage, LocalCallback };
    Kind kind = Kind::LocalCallback;
    ARMessage message;        // meaningful when kind == PostMessage
    std::string callback_id;  // meaningful when kind == LocalCallback
};

struct Rule {
    std::string name;
    int priority = 0;  // lower fires first; 0 is the highest priority
    Condition when;
    Consequence then;
};

struct RuleStats {
    uint64_t cycles = 0;
    uint64_t fired = 0;
    uint64_t dispatch_failures = 0;
    uint64_t eval_errors = 0;  // rule-condition evaluations that errored
};

class RuleEngine {
  public:
    // Receives the fired rule and the tuple (with any injected fields). A
    // throwing dispatcher marks the cycle's dispatch as failed; the rule
    // still counts as fired and is never retried.
    using Dispatcher = std::function<void(const Rule&, const DataTuple&)>;

    void set_dispatcher(Dispatcher d) { dispatcher_ = std::move(d); }

    void add_rule(Rule r) { rules_.push_back(std::move(r)); }
    void replace_rules(std::vector<Rule> rules) { rules_ = std::move(rules); }
    const std::vector<Rule>& rules() const { return rules_; }

    struct CycleResult {
        std::vector<size_t> conflict_set;   // indexes of satisfied rules
        std::optional<size_t> fired_index;  // the single fired rule, if any
        bool dispatch_ok = true;
    };

    CycleResult evaluate_cycle(const DataTuple& t);
    // Injects ELAPSED_MS (overwriting any incoming field of that name).
    CycleResult evaluate_cycle(DataTuple t, int64_t elapsed_ms);

    const RuleStats& stats() const { return stats_; }

  private:
    std::vector<Rule> rules_;
    Dispatcher dispatcher_;
    RuleStats stats_;
};

// Rule config: stanzas separated by blank lines, '#' comments. Lines:
//   name: <identifier>           (optional; defaults to rule<ordinal>)
//   priority: <integer>          (optional; defaults to 0)
//   when: IF(<expr>)             (required)
//   then: post <action> <profile-text>   |   then: callback <id>
// Throws ParseError with the offending line number.
std::vector<Rule> parse_rule_file(std::string_view text);

}  // namespace rpmesh
