#pragma once

// Arithmetic expression trees over decimal literals and number tags, with
// conversion between infix, prefix and postfix notation.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <variant>
#include <vector>

namespace mwp {

enum class Notation { Infix, Prefix, Postfix };

inline std::string_view to_string(Notation n) {
    switch (n) {
        case Notation::Infix: return "infix";
        case Notation::Prefix: return "prefix";
        case Notation::Postfix: return "postfix";
    }
    return "?";
}

inline std::optional<Notation> notation_from_string(std::string_view s) {
    if (s == "infix") return Notation::Infix;
    if (s == "prefix") return Notation::Prefix;
    if (s == "postfix") return Notation::Postfix;
    return std::nullopt;
}

enum class ExprErrorKind {
    EmptyInput,
    UnbalancedParentheses,
    DanglingOperator,
    UnknownSymbol,
    ArityError,
    TrailingTokens,
    UnresolvedTag,
    DivisionByZero,
};

inline std::string_view to_string(ExprErrorKind k) {
    switch (k) {
        case ExprErrorKind::EmptyInput: return "EmptyInput";
        case ExprErrorKind::UnbalancedParentheses: return "UnbalancedParentheses";
        case ExprErrorKind::DanglingOperator: return "DanglingOperator";
        case ExprErrorKind::UnknownSymbol: return "UnknownSymbol";
        case ExprErrorKind::ArityError: return "ArityError";
        case ExprErrorKind::TrailingTokens: return "TrailingTokens";
        case ExprErrorKind::UnresolvedTag: return "UnresolvedTag";
        case ExprErrorKind::DivisionByZero: return "DivisionByZero";
    }
    return "?";
}

class ExpressionError : public std::runtime_error {
public:
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    ExpressionError(ExprErrorKind kind, std::size_t position, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what +
                             (position == npos ? std::string{}
                                               : " at offset " + std::to_string(position))),
          kind_(kind),
          position_(position) {}

    ExprErrorKind kind() const noexcept { return kind_; }
    /// Byte offset in the input, or npos when not positional.
    std::size_t position() const noexcept { return position_; }

private:
    ExprErrorKind kind_;
    std::size_t position_;
};

/// Shortest decimal string that round-trips `value`, never in exponent form.
inline std::string format_number(double value) {
    if (value == 0.0) return "0";  // folds -0
    char buf[512];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed);
    if (ec != std::errc{}) throw std::runtime_error("format_number: value out of range");
    return std::string(buf, end);
}

/// Ordinal placeholder `<nK>` standing in for the K-th number of a question.
struct Tag {
    int ordinal = 1;
    bool operator==(const Tag&) const = default;
};

inline std::string tag_token(int ordinal) { return "<n" + std::to_string(ordinal) + ">"; }

enum class Op : char { Add = '+', Sub = '-', Mul = '*', Div = '/' };

inline int precedence(Op op) { return (op == Op::Add || op == Op::Sub) ? 1 : 2; }

inline std::optional<Op> op_from_char(char c) {
    switch (c) {
        case '+': return Op::Add;
        case '-': return Op::Sub;
        case '*': return Op::Mul;
        case '/': return Op::Div;
        default: return std::nullopt;
    }
}

/// Immutable binary expression tree. Copies share structure.
class Expression {
public:
    using Leaf = std::variant<double, Tag>;

    static Expression literal(double v) { return leaf_node(Leaf{v}); }
    static Expression tag(int ordinal) {
        if (ordinal < 1) throw std::invalid_argument("tag ordinal must be positive");
        return leaf_node(Leaf{Tag{ordinal}});
    }
    static Expression binary(Op op, Expression lhs, Expression rhs) {
        Node n;
        n.op = op;
        n.lhs = std::move(lhs.root_);
        n.rhs = std::move(rhs.root_);
        return Expression(std::make_shared<const Node>(std::move(n)));
    }

    bool is_leaf() const { return !root_->op.has_value(); }
    Op op() const { return *root_->op; }
    Expression lhs() const { return Expression(root_->lhs); }
    Expression rhs() const { return Expression(root_->rhs); }
    const Leaf& leaf() const { return root_->leaf; }

    std::size_t depth() const { return is_leaf() ? 1 : 1 + std::max(lhs().depth(), rhs().depth()); }

    friend bool operator==(const Expression& a, const Expression& b) {
        if (a.root_ == b.root_) return true;
        if (a.is_leaf() != b.is_leaf()) return false;
        if (a.is_leaf()) return a.leaf() == b.leaf();
        return a.op() == b.op() && a.lhs() == b.lhs() && a.rhs() == b.rhs();
    }

private:
    struct Node {
        Leaf leaf{0.0};
        std::optional<Op> op;
        std::shared_ptr<const Node> lhs;
        std::shared_ptr<const Node> rhs;
    };

    explicit Expression(std::shared_ptr<const Node> root) : root_(std::move(root)) {}

    static Expression leaf_node(Leaf leaf) {
        Node n;
        n.leaf = leaf;
        return Expression(std::make_shared<const Node>(std::move(n)));
    }

    std::shared_ptr<const Node> root_;
};

namespace detail {

struct ExprToken {
    enum class Kind { Number, Tag, Operator, LParen, RParen } kind;
    std::size_t pos = 0;
    double number = 0.0;
    int tag = 0;
    Op op = Op::Add;
};

inline bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Accepts decimal literals, `<nK>` tags (ASCII or the angle-bracket glyphs
// U+27E8/U+27E9), the four operators and parentheses.
inline std::vector<ExprToken> lex_expression(std::string_view text) {
    static constexpr std::string_view kOpenGlyph = "\xE2\x9F\xA8";   // ⟨
    static constexpr std::string_view kCloseGlyph = "\xE2\x9F\xA9";  // ⟩
    std::vector<ExprToken> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            ++i;
            continue;
        }
        const std::size_t start = i;
        if (is_digit(c)) {
            while (i < text.size() && is_digit(text[i])) ++i;
            if (i + 1 < text.size() && text[i] == '.' && is_digit(text[i + 1])) {
                ++i;
                while (i < text.size() && is_digit(text[i])) ++i;
            }
            ExprToken t{ExprToken::Kind::Number, start};
            std::from_chars(text.data() + start, text.data() + i, t.number);
            out.push_back(t);
            continue;
        }
        const bool ascii_tag = c == '<';
        const bool glyph_tag = text.substr(i, kOpenGlyph.size()) == kOpenGlyph;
        if (ascii_tag || glyph_tag) {
            std::size_t j = i + (ascii_tag ? 1 : kOpenGlyph.size());
            if (j < text.size() && text[j] == 'n') {
                ++j;
                const std::size_t digits = j;
                while (j < text.size() && is_digit(text[j])) ++j;
                const std::string_view close = ascii_tag ? std::string_view(">") : kCloseGlyph;
                if (j > digits && text.substr(j, close.size()) == close) {
                    int ordinal = 0;
                    std::from_chars(text.data() + digits, text.data() + j, ordinal);
                    if (ordinal >= 1) {
                        ExprToken t{ExprToken::Kind::Tag, start};
                        t.tag = ordinal;
                        out.push_back(t);
                        i = j + close.size();
                        continue;
                    }
                }
            }
            throw ExpressionError(ExprErrorKind::UnknownSymbol, start, "malformed tag");
        }
        if (auto op = op_from_char(c)) {
            ExprToken t{ExprToken::Kind::Operator, start};
            t.op = *op;
            out.push_back(t);
        } else if (c == '(') {
            out.push_back({ExprToken::Kind::LParen, start});
        } else if (c == ')') {
            out.push_back({ExprToken::Kind::RParen, start});
        } else {
            throw ExpressionError(ExprErrorKind::UnknownSymbol, start,
                                  std::string("unexpected character '") + c + "'");
        }
        ++i;
    }
    return out;
}

inline Expression leaf_from(const ExprToken& t) {
    return t.kind == ExprToken::Kind::Tag ? Expression::tag(t.tag) : Expression::literal(t.number);
}

}  // namespace detail

/// Parses an infix equation with the usual precedence (* and / over + and -)
/// and left associativity. Operators and operands are kept on two stacks; a
/// reduction pops one operator and two operands into a new subtree.
inline Expression parse_infix(std::string_view text) {
    using detail::ExprToken;
    const auto tokens = detail::lex_expression(text);
    if (tokens.empty()) throw ExpressionError(ExprErrorKind::EmptyInput, ExpressionError::npos, "no tokens");

    struct Pending {
        bool paren;
        Op op;
        std::size_t pos;
    };
    std::vector<Expression> operands;
    std::vector<Pending> operators;

    auto reduce = [&]() {
        const Pending top = operators.back();
        operators.pop_back();
        if (operands.size() < 2)
            throw ExpressionError(ExprErrorKind::DanglingOperator, top.pos, "operator is missing an operand");
        Expression rhs = operands.back();
        operands.pop_back();
        Expression lhs = operands.back();
        operands.pop_back();
        operands.push_back(Expression::binary(top.op, std::move(lhs), std::move(rhs)));
    };

    bool expect_operand = true;
    for (const auto& t : tokens) {
        switch (t.kind) {
            case ExprToken::Kind::Number:
            case ExprToken::Kind::Tag:
                if (!expect_operand)
                    throw ExpressionError(ExprErrorKind::DanglingOperator, t.pos, "operand without an operator");
                operands.push_back(detail::leaf_from(t));
                expect_operand = false;
                break;
            case ExprToken::Kind::LParen:
                if (!expect_operand)
                    throw ExpressionError(ExprErrorKind::DanglingOperator, t.pos, "'(' after an operand");
                operators.push_back({true, Op::Add, t.pos});
                break;
            case ExprToken::Kind::RParen: {
                if (expect_operand)
                    throw ExpressionError(ExprErrorKind::DanglingOperator, t.pos, "')' where an operand is expected");
                while (!operators.empty() && !operators.back().paren) reduce();
                if (operators.empty())
                    throw ExpressionError(ExprErrorKind::UnbalancedParentheses, t.pos, "unmatched ')'");
                operators.pop_back();
                break;
            }
            case ExprToken::Kind::Operator:
                if (expect_operand)
                    throw ExpressionError(ExprErrorKind::DanglingOperator, t.pos, "operator without a left operand");
                while (!operators.empty() && !operators.back().paren &&
                       precedence(operators.back().op) >= precedence(t.op))
                    reduce();
                operators.push_back({false, t.op, t.pos});
                expect_operand = true;
                break;
        }
    }
    if (expect_operand)
        throw ExpressionError(ExprErrorKind::DanglingOperator, tokens.back().pos, "expression ends with an operator");
    while (!operators.empty()) {
        if (operators.back().paren)
            throw ExpressionError(ExprErrorKind::UnbalancedParentheses, operators.back().pos, "unmatched '('");
        reduce();
    }
    return operands.back();
}

namespace detail {

inline void render_leaf(const Expression& e, std::string& out) {
    if (const auto* v = std::get_if<double>(&e.leaf()))
        out += format_number(*v);
    else
        out += tag_token(std::get<Tag>(e.leaf()).ordinal);
}

inline void append_token(std::string& out, std::string_view tok) {
    if (!out.empty()) out += ' ';
    out += tok;
}

inline void render_prefix(const Expression& e, std::string& out) {
    if (!out.empty()) out += ' ';
    if (e.is_leaf()) return render_leaf(e, out);
    out += static_cast<char>(e.op());
    render_prefix(e.lhs(), out);
    render_prefix(e.rhs(), out);
}

inline void render_postfix(const Expression& e, std::string& out) {
    if (e.is_leaf()) {
        if (!out.empty()) out += ' ';
        return render_leaf(e, out);
    }
    render_postfix(e.lhs(), out);
    render_postfix(e.rhs(), out);
    append_token(out, std::string(1, static_cast<char>(e.op())));
}

// Right operands of equal precedence are bracketed too, so that re-parsing
// (left associative) reproduces the same tree.
inline void render_infix(const Expression& e, std::string& out) {
    if (e.is_leaf()) {
        if (!out.empty()) out += ' ';
        return render_leaf(e, out);
    }
    const int p = precedence(e.op());
    auto child = [&](const Expression& c, bool right) {
        const bool wrap = !c.is_leaf() && (precedence(c.op()) < p || (right && precedence(c.op()) == p));
        if (wrap) append_token(out, "(");
        render_infix(c, out);
        if (wrap) append_token(out, ")");
    };
    child(e.lhs(), false);
    append_token(out, std::string(1, static_cast<char>(e.op())));
    child(e.rhs(), true);
}

}  // namespace detail

/// Space-separated rendering. Prefix and postfix never contain parentheses.
inline std::string render(const Expression& e, Notation notation) {
    std::string out;
    switch (notation) {
        case Notation::Prefix: detail::render_prefix(e, out); break;
        case Notation::Postfix: detail::render_postfix(e, out); break;
        case Notation::Infix: detail::render_infix(e, out); break;
    }
    return out;
}

/// Inverse of render() for each notation.
inline Expression parse_notation(std::string_view text, Notation notation) {
    using detail::ExprToken;
    if (notation == Notation::Infix) return parse_infix(text);
    const auto tokens = detail::lex_expression(text);
    if (tokens.empty()) throw ExpressionError(ExprErrorKind::EmptyInput, ExpressionError::npos, "no tokens");
    for (const auto& t : tokens)
        if (t.kind == ExprToken::Kind::LParen || t.kind == ExprToken::Kind::RParen)
            throw ExpressionError(ExprErrorKind::UnknownSymbol, t.pos, "parenthesis in parenthesis-free notation");

    if (notation == Notation::Postfix) {
        std::vector<Expression> stack;
        for (const auto& t : tokens) {
            if (t.kind != ExprToken::Kind::Operator) {
                stack.push_back(detail::leaf_from(t));
                continue;
            }
            if (stack.size() < 2) throw ExpressionError(ExprErrorKind::ArityError, t.pos, "operator needs two operands");
            Expression rhs = stack.back();
            stack.pop_back();
            Expression lhs = stack.back();
            stack.pop_back();
            stack.push_back(Expression::binary(t.op, std::move(lhs), std::move(rhs)));
        }
        if (stack.size() > 1)
            throw ExpressionError(ExprErrorKind::TrailingTokens, ExpressionError::npos,
                                  std::to_string(stack.size()) + " operands left on the stack");
        return stack.back();
    }

    // Prefix: recursive descent over the token list.
    std::size_t next = 0;
    auto parse = [&](auto&& self) -> Expression {
        if (next >= tokens.size())
            throw ExpressionError(ExprErrorKind::ArityError, tokens.back().pos, "operator needs two operands");
        const ExprToken& t = tokens[next++];
        if (t.kind != ExprToken::Kind::Operator) return detail::leaf_from(t);
        Expression lhs = self(self);
        Expression rhs = self(self);
        return Expression::binary(t.op, std::move(lhs), std::move(rhs));
    };
    Expression result = parse(parse);
    if (next != tokens.size())
        throw ExpressionError(ExprErrorKind::TrailingTokens, tokens[next].pos, "unconsumed tokens");
    return result;
}

using TagValues = std::map<int, double>;

inline double evaluate(const Expression& e, const TagValues& tags = {}) {
    if (e.is_leaf()) {
        if (const auto* v = std::get_if<double>(&e.leaf())) return *v;
        const int k = std::get<Tag>(e.leaf()).ordinal;
        auto it = tags.find(k);
        if (it == tags.end())
            throw ExpressionError(ExprErrorKind::UnresolvedTag, ExpressionError::npos, "no value for " + tag_token(k));
        return it->second;
    }
    const double a = evaluate(e.lhs(), tags);
    const double b = evaluate(e.rhs(), tags);
    switch (e.op()) {
        case Op::Add: return a + b;
        case Op::Sub: return a - b;
        case Op::Mul: return a * b;
        case Op::Div:
            if (b == 0.0) throw ExpressionError(ExprErrorKind::DivisionByZero, ExpressionError::npos, "divisor is zero");
            return a / b;
    }
    return 0.0;
}

/// Relative comparison used for answers: |a-b| <= tol * max(|a|,|b|,1).
inline bool values_match(double a, double b, double rel_tol = 1e-6) {
    if (!std::isfinite(a) || !std::isfinite(b)) return false;
    return std::fabs(a - b) <= rel_tol * std::max({std::fabs(a), std::fabs(b), 1.0});
}

}  // namespace mwp
