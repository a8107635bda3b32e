#include "rpmesh/rules.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

#include "rpmesh/errors.hpp"

namespace rpmesh {

// ---------------------------------------------------------------------------
// AST

struct Expr {
    enum class Kind { Literal, Field, Not, And, Or, Compare };
    enum class Cmp { Lt, Le, Gt, Ge, Eq, Ne };

    Kind kind;
    Value literal;
    std::string field;
    Cmp cmp = Cmp::Eq;
    std::shared_ptr<const Expr> a, b;
};

namespace {

[[noreturn]] void eval_error(const std::string& what) { throw Error(Errc::EvalError, what); }

const char* type_name(const Value& v) {
    switch (v.index()) {
        case 0: return "integer";
        case 1: return "decimal";
        case 2: return "string";
        default: return "boolean";
    }
}

// Three-way compare for orderable families; booleans never reach here.
int compare_scalar(const Value& a, const Value& b) {
    bool as = std::holds_alternative<std::string>(a);
    bool bs = std::holds_alternative<std::string>(b);
    if (as != bs || std::holds_alternative<bool>(a) || std::holds_alternative<bool>(b))
        eval_error(std::string("cannot compare ") + type_name(a) + " with " + type_name(b));
    if (as) {
        const auto& x = std::get<std::string>(a);
        const auto& y = std::get<std::string>(b);
        return x < y ? -1 : x > y ? 1 : 0;
    }
    if (std::holds_alternative<int64_t>(a) && std::holds_alternative<int64_t>(b)) {
        int64_t x = std::get<int64_t>(a), y = std::get<int64_t>(b);
        return x < y ? -1 : x > y ? 1 : 0;
    }
    auto num = [](const Value& v) {
        return std::holds_alternative<int64_t>(v) ? double(std::get<int64_t>(v))
                                                  : std::get<double>(v);
    };
    double x = num(a), y = num(b);
    return x < y ? -1 : x > y ? 1 : 0;
}

Value eval_expr(const Expr& e, const DataTuple& t) {
    switch (e.kind) {
        case Expr::Kind::Literal: return e.literal;
        case Expr::Kind::Field: {
            auto it = t.find(e.field);
            if (it == t.end()) eval_error("unknown field '" + e.field + "'");
            return it->second;
        }
        case Expr::Kind::Not: {
            Value v = eval_expr(*e.a, t);
            if (!std::holds_alternative<bool>(v))
                eval_error(std::string("NOT applied to ") + type_name(v));
            return !std::get<bool>(v);
        }
        case Expr::Kind::And:
        case Expr::Kind::Or: {
            // Total evaluation: both sides run so type errors never hide.
            Value x = eval_expr(*e.a, t);
            Value y = eval_expr(*e.b, t);
            if (!std::holds_alternative<bool>(x) || !std::holds_alternative<bool>(y))
                eval_error(e.kind == Expr::Kind::And ? "AND over non-boolean operands"
                                                     : "OR over non-boolean operands");
            return e.kind == Expr::Kind::And
                       ? std::get<bool>(x) && std::get<bool>(y)
                       : std::get<bool>(x) || std::get<bool>(y);
        }
        case Expr::Kind::Compare: {
            Value x = eval_expr(*e.a, t);
            Value y = eval_expr(*e.b, t);
            bool xb = std::holds_alternative<bool>(x), yb = std::holds_alternative<bool>(y);
            if (e.cmp == Expr::Cmp::Eq || e.cmp == Expr::Cmp::Ne) {
                if (xb || yb) {
                    if (!(xb && yb))
                        eval_error(std::string("cannot compare ") + type_name(x) + " with " +
                                   type_name(y));
                    bool eq = std::get<bool>(x) == std::get<bool>(y);
                    return e.cmp == Expr::Cmp::Eq ? eq : !eq;
                }
                int c = compare_scalar(x, y);
                return e.cmp == Expr::Cmp::Eq ? c == 0 : c != 0;
            }
            int c = compare_scalar(x, y);
            switch (e.cmp) {
                case Expr::Cmp::Lt: return c < 0;
                case Expr::Cmp::Le: return c <= 0;
                case Expr::Cmp::Gt: return c > 0;
                default: return c >= 0;
            }
        }
    }
    eval_error("corrupt expression node");
}

// ---------------------------------------------------------------------------
// Tokenizer / recursive-descent parser

struct Token {
    enum class Kind { LParen, RParen, If, And, Or, Not, Cmp, Int, Dec, Str, True, False, Ident, End };
    Kind kind;
    size_t pos = 0;
    std::string text;    // Ident / Str payload, Cmp operator
    int64_t int_v = 0;
    double dec_v = 0;
};

[[noreturn]] void parse_error(size_t pos, const std::string& what) {
    throw Error(Errc::ParseError, what + " at offset " + std::to_string(pos));
}

std::vector<Token> tokenize(std::string_view s) {
    std::vector<Token> out;
    size_t i = 0;
    auto keyword = [](std::string w) {
        for (char& c : w) c = char(std::toupper(static_cast<unsigned char>(c)));
        return w;
    };
    while (i < s.size()) {
        char c = s[i];
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            ++i;
            continue;
        }
        Token tok;
        tok.pos = i;
        if (c == '(') {
            tok.kind = Token::Kind::LParen;
            ++i;
        } else if (c == ')') {
            tok.kind = Token::Kind::RParen;
            ++i;
        } else if (c == '<' || c == '>' || c == '=' || c == '!') {
            tok.kind = Token::Kind::Cmp;
            if (i + 1 < s.size() && s[i + 1] == '=') {
                tok.text = std::string(s.substr(i, 2));
                i += 2;
            } else if (c == '<' || c == '>') {
                tok.text = std::string(1, c);
                ++i;
            } else {
                parse_error(i, std::string("stray '") + c + "'");
            }
        } else if (c == '"') {
            tok.kind = Token::Kind::Str;
            ++i;
            std::string v;
            while (i < s.size() && s[i] != '"') {
                if (s[i] == '\\' && i + 1 < s.size()) ++i;
                v += s[i++];
            }
            if (i >= s.size()) parse_error(tok.pos, "unterminated string");
            ++i;
            tok.text = std::move(v);
        } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                   (c == '-' && i + 1 < s.size() &&
                    std::isdigit(static_cast<unsigned char>(s[i + 1])))) {
            size_t j = i + 1;
            bool dec = false;
            while (j < s.size() && (std::isdigit(static_cast<unsigned char>(s[j])) ||
                                    (!dec && s[j] == '.' && j + 1 < s.size() &&
                                     std::isdigit(static_cast<unsigned char>(s[j + 1]))))) {
                if (s[j] == '.') dec = true;
                ++j;
            }
            std::string_view num = s.substr(i, j - i);
            if (dec) {
                tok.kind = Token::Kind::Dec;
                tok.dec_v = std::stod(std::string(num));
            } else {
                tok.kind = Token::Kind::Int;
                auto res = std::from_chars(num.data(), num.data() + num.size(), tok.int_v);
                if (res.ec != std::errc()) parse_error(i, "integer out of range");
            }
            i = j;
        } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            size_t j = i;
            while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) ||
                                    s[j] == '_' || s[j] == '.'))
                ++j;
            std::string word(s.substr(i, j - i));
            std::string up = keyword(word);
            if (up == "IF")
                tok.kind = Token::Kind::If;
            else if (up == "AND")
                tok.kind = Token::Kind::And;
            else if (up == "OR")
                tok.kind = Token::Kind::Or;
            else if (up == "NOT")
                tok.kind = Token::Kind::Not;
            else if (up == "TRUE")
                tok.kind = Token::Kind::True;
            else if (up == "FALSE")
                tok.kind = Token::Kind::False;
            else {
                tok.kind = Token::Kind::Ident;
                tok.text = std::move(word);
            }
            i = j;
        } else {
            parse_error(i, std::string("unexpected character '") + c + "'");
        }
        out.push_back(std::move(tok));
    }
    Token end;
    end.kind = Token::Kind::End;
    end.pos = s.size();
    out.push_back(end);
    return out;
}

class Parser {
  public:
    explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

    std::shared_ptr<const Expr> parse_condition() {
        expect(Token::Kind::If, "expected IF");
        expect(Token::Kind::LParen, "expected '(' after IF");
        auto e = expr();
        expect(Token::Kind::RParen, "expected ')'");
        if (cur().kind != Token::Kind::End) parse_error(cur().pos, "trailing input");
        return e;
    }

  private:
    std::vector<Token> toks_;
    size_t i_ = 0;

    const Token& cur() const { return toks_[i_]; }
    const Token& next() { return toks_[i_++]; }
    void expect(Token::Kind k, const char* what) {
        if (cur().kind != k) parse_error(cur().pos, what);
        ++i_;
    }

    std::shared_ptr<const Expr> make(Expr e) { return std::make_shared<Expr>(std::move(e)); }

    std::shared_ptr<const Expr> expr() {
        auto a = and_expr();
        while (cur().kind == Token::Kind::Or) {
            next();
            Expr e;
            e.kind = Expr::Kind::Or;
            e.a = a;
            e.b = and_expr();
            a = make(std::move(e));
        }
        return a;
    }

    std::shared_ptr<const Expr> and_expr() {
        auto a = unary();
        while (cur().kind == Token::Kind::And) {
            next();
            Expr e;
            e.kind = Expr::Kind::And;
            e.a = a;
            e.b = unary();
            a = make(std::move(e));
        }
        return a;
    }

    std::shared_ptr<const Expr> unary() {
        if (cur().kind == Token::Kind::Not) {
            next();
            Expr e;
            e.kind = Expr::Kind::Not;
            e.a = unary();
            return make(std::move(e));
        }
        return relation();
    }

    std::shared_ptr<const Expr> relation() {
        auto a = operand();
        if (cur().kind != Token::Kind::Cmp) return a;
        std::string op = next().text;
        Expr e;
        e.kind = Expr::Kind::Compare;
        e.cmp = op == "<"    ? Expr::Cmp::Lt
                : op == "<=" ? Expr::Cmp::Le
                : op == ">"  ? Expr::Cmp::Gt
                : op == ">=" ? Expr::Cmp::Ge
                : op == "==" ? Expr::Cmp::Eq
                             : Expr::Cmp::Ne;
        e.a = a;
        e.b = operand();
        return make(std::move(e));
    }

    std::shared_ptr<const Expr> operand() {
        const Token& t = cur();
        Expr e;
        switch (t.kind) {
            case Token::Kind::LParen: {
                next();
                auto inner = expr();
                expect(Token::Kind::RParen, "expected ')'");
                return inner;
            }
            case Token::Kind::Int:
                e.kind = Expr::Kind::Literal;
                e.literal = t.int_v;
                break;
            case Token::Kind::Dec:
                e.kind = Expr::Kind::Literal;
                e.literal = t.dec_v;
                break;
            case Token::Kind::Str:
                e.kind = Expr::Kind::Literal;
                e.literal = t.text;
                break;
            case Token::Kind::True:
                e.kind = Expr::Kind::Literal;
                e.literal = true;
                break;
            case Token::Kind::False:
                e.kind = Expr::Kind::Literal;
                e.literal = false;
                break;
            case Token::Kind::Ident:
                e.kind = Expr::Kind::Field;
                e.field = t.text;
                break;
            default: parse_error(t.pos, "expected a value, field, or '('");
        }
        next();
        return make(std::move(e));
    }
};

}  // namespace

// ---------------------------------------------------------------------------
// Condition

Condition Condition::parse(std::string_view text) {
    Condition c;
    c.text_ = std::string(text);
    c.root_ = Parser(tokenize(text)).parse_condition();
    return c;
}

bool Condition::evaluate(const DataTuple& t) const {
    Value v = eval_expr(*root_, t);
    if (!std::holds_alternative<bool>(v))
        eval_error(std::string("condition evaluates to ") + type_name(v) + ", not boolean");
    return std::get<bool>(v);
}

// ---------------------------------------------------------------------------
// Engine

RuleEngine::CycleResult RuleEngine::evaluate_cycle(const DataTuple& t) {
    ++stats_.cycles;
    CycleResult out;
    for (size_t i = 0; i < rules_.size(); ++i) {
        try {
            if (rules_[i].when.evaluate(t)) out.conflict_set.push_back(i);
        } catch (const Error& e) {
            if (e.code() != Errc::EvalError) throw;
            ++stats_.eval_errors;
        }
    }
    if (out.conflict_set.empty()) return out;
    size_t best = out.conflict_set.front();
    for (size_t i : out.conflict_set)
        if (rules_[i].priority < rules_[best].priority) best = i;
    out.fired_index = best;
    ++stats_.fired;
    if (dispatcher_) {
        try {
            dispatcher_(rules_[best], t);
        } catch (...) {
            out.dispatch_ok = false;
            ++stats_.dispatch_failures;
        }
    }
    return out;
}

RuleEngine::CycleResult RuleEngine::evaluate_cycle(DataTuple t, int64_t elapsed_ms) {
    t["ELAPSED_MS"] = elapsed_ms;
    return evaluate_cycle(t);
}

// ---------------------------------------------------------------------------
// Tuples as text

DataTuple parse_data_tuple(std::string_view text) {
    DataTuple t;
    size_t i = 0;
    auto fail = [&](const std::string& what) {
        throw Error(Errc::ParseError, what + " in tuple '" + std::string(text) + "'");
    };
    while (i < text.size()) {
        size_t eq = text.find('=', i);
        if (eq == std::string_view::npos) fail("missing '='");
        std::string name(text.substr(i, eq - i));
        while (!name.empty() && name.back() == ' ') name.pop_back();
        while (!name.empty() && name.front() == ' ') name.erase(name.begin());
        if (name.empty()) fail("empty field name");
        size_t end = text.find(',', eq + 1);
        if (end == std::string_view::npos) end = text.size();
        std::string raw(text.substr(eq + 1, end - eq - 1));
        while (!raw.empty() && raw.back() == ' ') raw.pop_back();
        while (!raw.empty() && raw.front() == ' ') raw.erase(raw.begin());

        if (t.count(name)) fail("duplicate field '" + name + "'");
        if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
            t[name] = raw.substr(1, raw.size() - 2);
        } else if (raw == "true" || raw == "false") {
            t[name] = (raw == "true");
        } else {
            int64_t iv;
            auto res = std::from_chars(raw.data(), raw.data() + raw.size(), iv);
            if (res.ec == std::errc() && res.ptr == raw.data() + raw.size()) {
                t[name] = iv;
            } else {
                try {
                    size_t used = 0;
                    double dv = std::stod(raw, &used);
                    if (used == raw.size() && !raw.empty())
                        t[name] = dv;
                    else
                        t[name] = raw;
                } catch (const std::exception&) {
                    t[name] = raw;
                }
            }
        }
        i = end == text.size() ? end : end + 1;
    }
    return t;
}

std::string data_tuple_text(const DataTuple& t) {
    std::ostringstream out;
    bool first = true;
    for (const auto& [name, v] : t) {
        if (!first) out << ',';
        first = false;
        out << name << '=';
        switch (v.index()) {
            case 0: out << std::get<int64_t>(v); break;
            case 1: out << std::get<double>(v); break;
            case 2: out << '"' << std::get<std::string>(v) << '"'; break;
            default: out << (std::get<bool>(v) ? "true" : "false");
        }
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Rule files

std::vector<Rule> parse_rule_file(std::string_view text) {
    std::vector<Rule> rules;
    struct Pending {
        std::string name;
        std::optional<int> priority;
        std::optional<std::string> when;
        std::optional<std::string> then;
        size_t first_line = 0;
    };
    std::optional<Pending> cur;

    auto finish = [&](Pending& p) {
        if (!p.when)
            throw Error(Errc::ParseError,
                        "rule stanza at line " + std::to_string(p.first_line) + " lacks 'when:'");
        if (!p.then)
            throw Error(Errc::ParseError,
                        "rule stanza at line " + std::to_string(p.first_line) + " lacks 'then:'");
        Rule r;
        r.name = p.name.empty() ? "rule" + std::to_string(rules.size()) : p.name;
        r.priority = p.priority.value_or(0);
        r.when = Condition::parse(*p.when);

        std::istringstream ts(*p.then);
        std::string kind;
        ts >> kind;
        if (kind == "post") {
            std::string action, profile;
            ts >> action >> profile;
            if (action.empty() || profile.empty())
                throw Error(Errc::ParseError, "then: post needs '<action> <profile>' (line " +
                                                  std::to_string(p.first_line) + ")");
            auto act = action_from_name(action);
            if (!act)
                throw Error(Errc::ParseError, "unknown action '" + action + "' (line " +
                                                  std::to_string(p.first_line) + ")");
            r.then.kind = Consequence::Kind::PostMessage;
            r.then.message.action = *act;
            r.then.message.profile = Profile::parse(profile);
        } else if (kind == "callback") {
            std::string id;
            ts >> id;
            if (id.empty())
                throw Error(Errc::ParseError, "then: callback needs an id (line " +
                                                  std::to_string(p.first_line) + ")");
            r.then.kind = Consequence::Kind::LocalCallback;
            r.then.callback_id = id;
        } else {
            throw Error(Errc::ParseError, "unknown consequence '" + kind + "' (line " +
                                              std::to_string(p.first_line) + ")");
        }
        rules.push_back(std::move(r));
    };

    size_t line_no = 0;
    std::string line;
    std::istringstream in{std::string(text)};
    while (std::getline(in, line)) {
        ++line_no;
        if (size_t hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\r' || line.back() == '\t'))
            line.pop_back();
        size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos) {  // blank: stanza boundary
            if (cur) {
                finish(*cur);
                cur.reset();
            }
            continue;
        }
        size_t colon = line.find(':', start);
        if (colon == std::string::npos)
            throw Error(Errc::ParseError, "expected 'key: value' at line " + std::to_string(line_no));
        std::string key = line.substr(start, colon - start);
        std::string value = line.substr(colon + 1);
        if (size_t vs = value.find_first_not_of(" \t"); vs != std::string::npos)
            value = value.substr(vs);
        else
            value.clear();

        if (!cur) {
            cur = Pending{};
            cur->first_line = line_no;
        }
        if (key == "name")
            cur->name = value;
        else if (key == "priority") {
            int pv = 0;
            auto res = std::from_chars(value.data(), value.data() + value.size(), pv);
            if (res.ec != std::errc() || res.ptr != value.data() + value.size())
                throw Error(Errc::ParseError, "bad priority at line " + std::to_string(line_no));
            cur->priority = pv;
        } else if (key == "when")
            cur->when = value;
        else if (key == "then")
            cur->then = value;
        else
            throw Error(Errc::ParseError,
                        "unknown key '" + key + "' at line " + std::to_string(line_no));
    }
    if (cur) finish(*cur);
    return rules;
}

}  // namespace rpmesh
