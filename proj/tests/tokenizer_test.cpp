#include <gtest/gtest.h>

#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mwp/corpus.hpp"
#include "mwp/tokenizer.hpp"

using namespace mwp;

namespace {

std::vector<std::string> hand_corpus_text() {
    std::vector<std::string> out;
    for (const auto& p : prepare(load_dataset(MWP_TEST_DATA "/hand_corpus.jsonl"), Notation::Postfix)) {
        out.push_back(p.source);
        out.push_back(p.target);
    }
    return out;
}

// Random string mixing corpus words, tags, operators, digits, odd spacing
// and arbitrary bytes (including invalid UTF-8).
std::string random_text(std::mt19937_64& rng, const std::vector<std::string>& words) {
    std::string s;
    const int n = static_cast<int>(rng() % 12);
    for (int i = 0; i < n; ++i) {
        switch (rng() % 7) {
            case 0: s += words[rng() % words.size()]; break;
            case 1: s += tag_token(1 + static_cast<int>(rng() % 20)); break;
            case 2: s += "+-*/()"[rng() % 6]; break;
            case 3: s += std::string(1 + rng() % 3, ' '); break;
            case 4: s += std::to_string(rng() % 10000); break;
            case 5: s += static_cast<char>(rng() % 256); break;
            default: s += "\xE2\x9F\xA8n" + std::to_string(rng() % 20) + "\xE2\x9F\xA9"; break;
        }
    }
    return s;
}

}  // namespace

TEST(Vocabulary, DegenerateCorpus) {
    const auto v = SubwordVocabulary::build({"a a a"}, 10);
    for (const std::string& s : {"a a a", "a", " a", "", "b"}) EXPECT_EQ(v.decode(v.encode(s)), s);
    EXPECT_EQ(v.encode("a").size(), 1u);
}

TEST(Vocabulary, EmptyCorpusRejected) {
    try {
        SubwordVocabulary::build({});
        FAIL();
    } catch (const TokenizerError& e) {
        EXPECT_EQ(e.kind(), TokenizerError::Kind::EmptyCorpus);
    }
}

TEST(Vocabulary, MergesFrequentPairs) {
    const auto v = SubwordVocabulary::build({"tickets tickets tickets"});
    EXPECT_EQ(v.encode(" tickets").size(), 1u);
    EXPECT_EQ(v.encode("tickets").size(), 1u);
    EXPECT_GT(v.size(), 3u + 2u * SubwordVocabulary::kMaxTags + 6u + 256u);
}

TEST(Vocabulary, RespectsTargetSize) {
    const auto corpus = hand_corpus_text();
    const auto small = SubwordVocabulary::build(corpus, 400);
    EXPECT_EQ(small.size(), 400u);
    const auto large = SubwordVocabulary::build(corpus);
    EXPECT_GT(large.size(), 400u);
    EXPECT_LT(large.size(), SubwordVocabulary::kDefaultSize);
}

TEST(Vocabulary, TagsAndOperatorsAreAtomic) {
    const auto v = SubwordVocabulary::build(hand_corpus_text());
    for (int k = 1; k <= SubwordVocabulary::kMaxTags; ++k) {
        EXPECT_EQ(v.encode(tag_token(k)).size(), 1u) << k;
        EXPECT_EQ(v.encode("\xE2\x9F\xA8n" + std::to_string(k) + "\xE2\x9F\xA9").size(), 1u) << k;
    }
    for (const char* op : {"+", "-", "*", "/", "(", ")"}) EXPECT_EQ(v.encode(op).size(), 1u) << op;
    // Inside text: "<n1> <n2> - <n3> *" is tag, space, tag, space, op, ...
    const auto ids = v.encode("<n1> <n2> - <n3> *");
    EXPECT_EQ(v.piece(ids[0]), "<n1>");
    EXPECT_EQ(v.piece(ids[2]), "<n2>");
}

TEST(Vocabulary, EncodeDecodeBasics) {
    const auto v = SubwordVocabulary::build(hand_corpus_text());
    EXPECT_EQ(v.decode(v.encode("13 4 - 9 *")), "13 4 - 9 *");
    EXPECT_TRUE(v.encode("").empty());
    try {
        v.decode({static_cast<TokenId>(v.size() + 1)});
        FAIL();
    } catch (const TokenizerError& e) {
        EXPECT_EQ(e.kind(), TokenizerError::Kind::UnknownId);
    }
    EXPECT_EQ(v.decode({SubwordVocabulary::kStart, v.encode("x")[0], SubwordVocabulary::kEnd}), "x");
}

TEST(Vocabulary, SerializationIsDeterministicAndLossless) {
    const auto corpus = hand_corpus_text();
    const auto a = SubwordVocabulary::build(corpus, 600);
    const auto b = SubwordVocabulary::build(corpus, 600);
    EXPECT_EQ(a.serialize(), b.serialize());
    const auto c = SubwordVocabulary::deserialize(a.serialize());
    EXPECT_EQ(c.serialize(), a.serialize());
    for (const auto& s : corpus) EXPECT_EQ(c.encode(s), a.encode(s));
}

TEST(Vocabulary, RejectsCorruptFiles) {
    const auto v = SubwordVocabulary::build({"abc abc abc"});
    std::string text = v.serialize();
    EXPECT_THROW(SubwordVocabulary::deserialize("SWV2 3\n"), TokenizerError);
    EXPECT_THROW(SubwordVocabulary::deserialize(text + "M 99999 1 x\n"), TokenizerError);
    text.replace(text.find("<n1>"), 4, "<n9>");
    EXPECT_THROW(SubwordVocabulary::deserialize(text), TokenizerError);
}

TEST(Vocabulary, EscapeRoundTrip) {
    std::string all;
    for (int b = 0; b < 256; ++b) all += static_cast<char>(b);
    const std::string esc = SubwordVocabulary::escape(all);
    EXPECT_EQ(esc.find_first_of(" \n\r\t"), std::string::npos);
    EXPECT_EQ(SubwordVocabulary::unescape(esc), all);
}

TEST(VocabularyProperty, RandomStringsRoundTrip) {
    const auto corpus = hand_corpus_text();
    const auto v = SubwordVocabulary::build(corpus);
    std::vector<std::string> words;
    for (const auto& s : corpus) {
        std::istringstream in(s);
        std::string w;
        while (in >> w) words.push_back(w);
    }
    std::mt19937_64 rng(99);
    for (int i = 0; i < 10000; ++i) {
        const std::string s = random_text(rng, words);
        const auto ids = v.encode(s);
        for (TokenId id : ids) ASSERT_GT(id, SubwordVocabulary::kEnd);
        ASSERT_EQ(v.decode(ids), s);
    }
}
