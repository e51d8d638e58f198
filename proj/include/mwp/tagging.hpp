#pragma once

// Number tagging: numerals in a question become ordinal placeholders <n1>,
// <n2>, ... and the values are kept so generated expressions can be
// restored to concrete arithmetic.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mwp/expression.hpp"

namespace mwp {

class TaggingError : public std::runtime_error {
public:
    enum class Kind { EquationNumberNotInQuestion, UnknownTag, EmptyQuestion };

    TaggingError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

using TagMap = std::map<int, double>;

struct TaggingOptions {
    /// Also tag spelled-out cardinals ("eight" -> 8). Off by default.
    bool number_words = false;
    /// Throw EquationNumberNotInQuestion instead of keeping the literal.
    bool strict_equation_numbers = false;
};

struct TaggedProblem {
    std::string original_question;
    std::string tagged_question;
    std::string tagged_equation;  // infix
    TagMap tag_map;
    /// Equation values with no counterpart in the question; kept as literals.
    std::vector<double> unmatched_values;
};

struct TaggedText {
    std::string text;
    TagMap tag_map;
};

namespace detail {

inline bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// Length of an existing tag (`<nK>` or `⟨nK⟩`) starting at i, or 0.
inline std::size_t tag_length_at(std::string_view s, std::size_t i, int* ordinal = nullptr) {
    static constexpr std::string_view kOpenGlyph = "\xE2\x9F\xA8";
    static constexpr std::string_view kCloseGlyph = "\xE2\x9F\xA9";
    const bool glyph = s.substr(i, kOpenGlyph.size()) == kOpenGlyph;
    if (!glyph && s.substr(i, 1) != "<") return 0;
    std::size_t j = i + (glyph ? kOpenGlyph.size() : 1);
    if (j >= s.size() || s[j] != 'n') return 0;
    const std::size_t digits = ++j;
    while (j < s.size() && is_digit(s[j])) ++j;
    const std::string_view close = glyph ? kCloseGlyph : std::string_view(">");
    if (j == digits || s.substr(j, close.size()) != close) return 0;
    if (ordinal) std::from_chars(s.data() + digits, s.data() + j, *ordinal);
    return j + close.size() - i;
}

// Numeral at i: 1,234.5 | 1234.5 | 12. Returns length (0 if none) and value.
inline std::size_t numeral_at(std::string_view s, std::size_t i, double& value) {
    if (i >= s.size() || !is_digit(s[i])) return 0;
    std::size_t j = i;
    while (j < s.size() && is_digit(s[j])) ++j;
    std::string digits(s.substr(i, j - i));
    // Thousands groups only when the leading run is 1-3 digits and every
    // group is exactly three digits.
    if (j - i <= 3) {
        std::size_t k = j;
        std::string grouped = digits;
        while (k + 3 < s.size() && s[k] == ',' && is_digit(s[k + 1]) && is_digit(s[k + 2]) &&
               is_digit(s[k + 3]) && (k + 4 >= s.size() || !is_digit(s[k + 4]))) {
            grouped.append(s.substr(k + 1, 3));
            k += 4;
        }
        if (k != j) {
            j = k;
            digits = grouped;
        }
    }
    if (j + 1 < s.size() && s[j] == '.' && is_digit(s[j + 1])) {
        std::size_t k = j + 1;
        while (k < s.size() && is_digit(s[k])) ++k;
        digits.append(s.substr(j, k - j));
        j = k;
    }
    std::from_chars(digits.data(), digits.data() + digits.size(), value);
    return j - i;
}

inline const std::map<std::string, double>& number_words() {
    static const std::map<std::string, double> words = {
        {"zero", 0},      {"one", 1},       {"two", 2},        {"three", 3},     {"four", 4},
        {"five", 5},      {"six", 6},       {"seven", 7},      {"eight", 8},     {"nine", 9},
        {"ten", 10},      {"eleven", 11},   {"twelve", 12},    {"thirteen", 13}, {"fourteen", 14},
        {"fifteen", 15},  {"sixteen", 16},  {"seventeen", 17}, {"eighteen", 18}, {"nineteen", 19},
        {"twenty", 20},   {"thirty", 30},   {"forty", 40},     {"fifty", 50},    {"sixty", 60},
        {"seventy", 70},  {"eighty", 80},   {"ninety", 90},    {"hundred", 100}, {"thousand", 1000},
        {"dozen", 12},
    };
    return words;
}

inline std::size_t number_word_at(std::string_view s, std::size_t i, double& value) {
    if (i > 0 && is_alnum(s[i - 1])) return 0;
    std::size_t j = i;
    while (j < s.size() && std::isalpha(static_cast<unsigned char>(s[j]))) ++j;
    if (j == i || (j < s.size() && is_digit(s[j]))) return 0;
    std::string word(s.substr(i, j - i));
    std::transform(word.begin(), word.end(), word.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    const auto& table = number_words();
    auto it = table.find(word);
    if (it == table.end()) return 0;
    value = it->second;
    return j - i;
}

}  // namespace detail

/// Replaces every numeral of `question` with <nK>, K counting occurrences
/// left to right. Repeated values get distinct ordinals. Existing tags are
/// left alone, so tagging is idempotent.
inline TaggedText tag_question_only(std::string_view question, const TaggingOptions& options = {}) {
    TaggedText out;
    out.text.reserve(question.size());
    int next = 1;
    std::size_t i = 0;
    while (i < question.size()) {
        if (std::size_t n = detail::tag_length_at(question, i)) {
            out.text.append(question.substr(i, n));
            i += n;
            continue;
        }
        double value = 0;
        std::size_t n = detail::numeral_at(question, i, value);
        if (n == 0 && options.number_words) n = detail::number_word_at(question, i, value);
        if (n > 0) {
            out.tag_map[next] = value;
            out.text += tag_token(next);
            ++next;
            i += n;
            continue;
        }
        out.text += question[i++];
    }
    return out;
}

namespace detail {

inline Expression bind_tags(const Expression& e, const TagMap& tags, std::vector<bool>& used,
                            std::vector<double>& unmatched, bool strict) {
    if (!e.is_leaf()) {
        Expression lhs = bind_tags(e.lhs(), tags, used, unmatched, strict);
        Expression rhs = bind_tags(e.rhs(), tags, used, unmatched, strict);
        return Expression::binary(e.op(), std::move(lhs), std::move(rhs));
    }
    const auto* v = std::get_if<double>(&e.leaf());
    if (!v) return e;
    int first_match = 0;
    for (const auto& [k, value] : tags) {
        if (value != *v) continue;
        if (!used[static_cast<std::size_t>(k)]) {
            used[static_cast<std::size_t>(k)] = true;
            return Expression::tag(k);
        }
        if (first_match == 0) first_match = k;
    }
    if (first_match != 0) return Expression::tag(first_match);
    if (strict)
        throw TaggingError(TaggingError::Kind::EquationNumberNotInQuestion,
                           "EquationNumberNotInQuestion(" + format_number(*v) + ")");
    unmatched.push_back(*v);
    return e;
}

}  // namespace detail

/// Tags a question and its infix equation. Equation literals bind to the
/// earliest unused tag with the same value (falling back to the earliest
/// used one); a value absent from the question stays a literal and is
/// reported in `unmatched_values`, or throws when strict.
inline TaggedProblem tag(std::string_view question, std::string_view equation, const TaggingOptions& options = {}) {
    if (question.empty()) throw TaggingError(TaggingError::Kind::EmptyQuestion, "empty question");
    const Expression tree = parse_infix(equation);
    TaggedText tagged = tag_question_only(question, options);

    TaggedProblem out;
    out.original_question = std::string(question);
    out.tagged_question = std::move(tagged.text);
    out.tag_map = std::move(tagged.tag_map);
    std::vector<bool> used(out.tag_map.size() + 1, false);
    const Expression bound = detail::bind_tags(tree, out.tag_map, used, out.unmatched_values,
                                               options.strict_equation_numbers);
    out.tagged_equation = render(bound, Notation::Infix);
    return out;
}

/// Substitutes each <nK> in `expression` with its value; every other byte is
/// copied through unchanged.
inline std::string detag(std::string_view expression, const TagMap& tags) {
    std::string out;
    out.reserve(expression.size());
    std::size_t i = 0;
    while (i < expression.size()) {
        int k = 0;
        if (std::size_t n = detail::tag_length_at(expression, i, &k)) {
            auto it = tags.find(k);
            if (it == tags.end())
                throw TaggingError(TaggingError::Kind::UnknownTag, "UnknownTag(" + std::to_string(k) + ")");
            out += format_number(it->second);
            i += n;
            continue;
        }
        out += expression[i++];
    }
    return out;
}

}  // namespace mwp
