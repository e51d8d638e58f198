#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <string>

#include "mwp/corpus.hpp"
#include "mwp/tagging.hpp"

using namespace mwp;

namespace {

const std::string kAdam =
    "At the fair Adam bought 13 tickets. After riding the ferris wheel he had 4 tickets left. If each ticket cost 9 "
    "dollars, how much money did Adam spend riding the ferris wheel?";

TaggingError::Kind tagging_error(std::string_view q, std::string_view e, TaggingOptions o = {}) {
    try {
        tag(q, e, o);
    } catch (const TaggingError& err) {
        return err.kind();
    }
    ADD_FAILURE() << "no TaggingError";
    return TaggingError::Kind::EmptyQuestion;
}

bool has_digit(const std::string& s) {
    // Digits inside tags do not count.
    std::string stripped;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (std::size_t n = detail::tag_length_at(s, i)) {
            i += n - 1;
            continue;
        }
        stripped += s[i];
    }
    return stripped.find_first_of("0123456789") != std::string::npos;
}

}  // namespace

TEST(Tag, AdamTickets) {
    const TaggedProblem p = tag(kAdam, "(13 - 4) * 9");
    EXPECT_EQ(p.tag_map, (TagMap{{1, 13}, {2, 4}, {3, 9}}));
    EXPECT_EQ(p.tagged_equation, "( <n1> - <n2> ) * <n3>");
    EXPECT_NE(p.tagged_question.find("bought <n1> tickets"), std::string::npos);
    EXPECT_NE(p.tagged_question.find("had <n2> tickets"), std::string::npos);
    EXPECT_NE(p.tagged_question.find("cost <n3>"), std::string::npos);
    EXPECT_TRUE(p.unmatched_values.empty());
    EXPECT_EQ(p.original_question, kAdam);
}

TEST(Tag, OccurrenceOrderNotEquationOrder) {
    const TaggedProblem p = tag(
        "There were 16 friends playing a video game online when 7 players quit. If each player left had 8 lives, how "
        "many lives did they have total?",
        "8 * (16 - 7)");
    EXPECT_EQ(p.tag_map, (TagMap{{1, 16}, {2, 7}, {3, 8}}));
    EXPECT_EQ(p.tagged_equation, "<n3> * ( <n1> - <n2> )");
}

TEST(Tag, EquationNumberMissingFromQuestion) {
    EXPECT_EQ(tagging_error("no numbers here", "2", {false, true}), TaggingError::Kind::EquationNumberNotInQuestion);
    const TaggedProblem lenient = tag("no numbers here", "2");
    EXPECT_EQ(lenient.tagged_equation, "2");
    EXPECT_EQ(lenient.unmatched_values, std::vector<double>{2});
    EXPECT_EQ(tagging_error("", "1"), TaggingError::Kind::EmptyQuestion);
}

TEST(Tag, RepeatedValuesBindToDistinctTags) {
    const TaggedProblem p = tag("Ann has 5 apples and Bob has 5 apples.", "5 + 5");
    EXPECT_EQ(p.tagged_equation, "<n1> + <n2>");
    const TaggedProblem q = tag("Ann has 5 apples.", "5 * 5");
    EXPECT_EQ(q.tagged_equation, "<n1> * <n1>");
}

TEST(TagQuestionOnly, Examples) {
    const TaggedText lisa = tag_question_only("Lisa flew 256 miles at 32 miles per hour.");
    EXPECT_EQ(lisa.tag_map, (TagMap{{1, 256}, {2, 32}}));
    EXPECT_EQ(lisa.text, "Lisa flew <n1> miles at <n2> miles per hour.");

    const TaggedText none = tag_question_only("no numbers here");
    EXPECT_TRUE(none.tag_map.empty());
    EXPECT_EQ(none.text, "no numbers here");

    const TaggedText dup = tag_question_only("1.5 and 1.5");
    EXPECT_EQ(dup.tag_map, (TagMap{{1, 1.5}, {2, 1.5}}));
    EXPECT_EQ(dup.text, "<n1> and <n2>");
}

TEST(TagQuestionOnly, NumeralForms) {
    const TaggedText t = tag_question_only("Ben earned 1,200 dollars, then 3.75 more, then 12. Done at 1,2345.");
    EXPECT_EQ(t.tag_map.at(1), 1200);
    EXPECT_EQ(t.tag_map.at(2), 3.75);
    EXPECT_EQ(t.tag_map.at(3), 12);
    // "1,2345" is not a thousands group: 1 and 2345 separately.
    EXPECT_EQ(t.tag_map.at(4), 1);
    EXPECT_EQ(t.tag_map.at(5), 2345);
    EXPECT_EQ(t.text, "Ben earned <n1> dollars, then <n2> more, then <n3>. Done at <n4>,<n5>.");
}

TEST(TagQuestionOnly, NumberWordsAreOptIn) {
    const std::string q = "Sam has eight apples and buys 3 more.";
    EXPECT_EQ(tag_question_only(q).tag_map, (TagMap{{1, 3}}));
    TaggingOptions words;
    words.number_words = true;
    const TaggedText t = tag_question_only(q, words);
    EXPECT_EQ(t.tag_map, (TagMap{{1, 8}, {2, 3}}));
    EXPECT_EQ(t.text, "Sam has <n1> apples and buys <n2> more.");
    EXPECT_EQ(tag_question_only("Someone said none.", words).tag_map.size(), 0u);
}

TEST(TagQuestionOnly, Idempotent) {
    const TaggedText once = tag_question_only(kAdam);
    const TaggedText twice = tag_question_only(once.text);
    EXPECT_EQ(twice.text, once.text);
    EXPECT_TRUE(twice.tag_map.empty());
}

TEST(Detag, Examples) {
    EXPECT_EQ(detag("\xE2\x9F\xA8n1\xE2\x9F\xA9 \xE2\x9F\xA8n2\xE2\x9F\xA9 - \xE2\x9F\xA8n3\xE2\x9F\xA9 *",
                    {{1, 13}, {2, 4}, {3, 9}}),
              "13 4 - 9 *");
    EXPECT_EQ(detag("<n1>", {{1, 0.5}}), "0.5");
    try {
        detag("<n4>", {{1, 13}});
        FAIL();
    } catch (const TaggingError& e) {
        EXPECT_EQ(e.kind(), TaggingError::Kind::UnknownTag);
        EXPECT_NE(std::string(e.what()).find("4"), std::string::npos);
    }
}

TEST(TaggingProperty, HandCorpusRoundTrip) {
    const auto records = load_dataset(MWP_TEST_DATA "/hand_corpus.jsonl");
    ASSERT_EQ(records.size(), 50u);
    for (const auto& r : records) {
        const TaggedProblem p = tag(r.question, r.equation);
        const double original = evaluate(parse_infix(r.equation));
        EXPECT_EQ(evaluate(parse_infix(detag(p.tagged_equation, p.tag_map))), original) << r.id;
        EXPECT_EQ(evaluate(parse_infix(p.tagged_equation), p.tag_map), original) << r.id;
        EXPECT_FALSE(has_digit(p.tagged_question)) << r.id;
        EXPECT_EQ(tag_question_only(p.tagged_question).text, p.tagged_question) << r.id;
        // Bijection between numeral occurrences and ordinals.
        for (std::size_t k = 1; k <= p.tag_map.size(); ++k) {
            const std::string t = tag_token(static_cast<int>(k));
            const auto first = p.tagged_question.find(t);
            ASSERT_NE(first, std::string::npos) << r.id;
            EXPECT_EQ(p.tagged_question.find(t, first + 1), std::string::npos) << r.id;
        }
    }
}

TEST(TaggingProperty, RandomQuestions) {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 500; ++i) {
        std::string q = "start";
        std::vector<double> values;
        const int n = 1 + static_cast<int>(rng() % 6);
        for (int k = 0; k < n; ++k) {
            const double v = static_cast<double>(rng() % 1000) + (rng() % 2 ? 0.5 : 0.0);
            values.push_back(v);
            q += " word " + format_number(v);
        }
        q += " end.";
        const TaggedText t = tag_question_only(q);
        ASSERT_EQ(t.tag_map.size(), values.size()) << q;
        for (int k = 0; k < n; ++k) EXPECT_EQ(t.tag_map.at(k + 1), values[static_cast<std::size_t>(k)]);
        EXPECT_FALSE(has_digit(t.text));
    }
}
