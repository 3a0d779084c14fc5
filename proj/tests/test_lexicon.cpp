#include <gtest/gtest.h>

#include <random>
#include <unordered_set>

#include "nflat/lexicon.hpp"
#include "nflat/synthetic.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"

using namespace nflat;

namespace {

std::vector<oracle::Span> spans(const std::vector<MatchedWord>& ms) {
  std::vector<oracle::Span> out;
  for (const auto& m : ms) out.push_back({m.surface, m.head, m.tail});
  return out;
}

std::u32string random_word(std::mt19937_64& gen, std::size_t alphabet, std::size_t min_len, std::size_t max_len) {
  std::uniform_int_distribution<std::size_t> len(min_len, max_len), ch(0, alphabet - 1);
  std::u32string w(len(gen), U'a');
  for (auto& c : w) c = static_cast<char32_t>(U'a' + ch(gen));
  return w;
}

}  // namespace

TEST(Trie, PrefixIsNotTerminal) {
  const std::vector<std::u32string> words{U"ab", U"abc"};
  auto trie = build_trie(std::span<const std::u32string>(words));
  EXPECT_TRUE(trie.contains(U"ab"));
  EXPECT_TRUE(trie.contains(U"abc"));
  EXPECT_FALSE(trie.contains(U"a"));
  EXPECT_EQ(trie.word_count(), 2u);
}

TEST(Trie, EmptyLexiconMatchesNothing) {
  const std::vector<std::u32string> none;
  auto trie = build_trie(std::span<const std::u32string>(none));
  EXPECT_EQ(trie.word_count(), 0u);
  EXPECT_TRUE(match_words(trie, U"anything at all").empty());
}

TEST(Trie, DuplicatesKeepOneEntry) {
  const std::vector<std::u32string> words{U"ab", U"cd", U"ab"};
  auto trie = build_trie(std::span<const std::u32string>(words));
  EXPECT_EQ(trie.word_count(), 2u);
  EXPECT_EQ(trie.find(U"ab"), 0);
}

TEST(Trie, EmptyWordRejected) {
  const std::vector<std::u32string> words{U"ab", U""};
  EXPECT_THROW(build_trie(std::span<const std::u32string>(words)), DataError);
}

TEST(Trie, MembershipAgreesWithHashSet) {
  std::mt19937_64 gen(11);
  std::vector<std::u32string> words;
  for (int i = 0; i < 10000; ++i) words.push_back(random_word(gen, 6, 1, 7));
  auto trie = build_trie(std::span<const std::u32string>(words));
  std::unordered_set<std::u32string> set(words.begin(), words.end());
  EXPECT_EQ(trie.word_count(), set.size());
  for (int i = 0; i < 10000; ++i) {
    const auto probe = random_word(gen, 6, 1, 7);
    ASSERT_EQ(trie.contains(probe), set.count(probe) > 0) << utf8::encode(probe);
  }
}

TEST(Match, ChineseExample) {
  const std::vector<std::string> lex{"今天", "天晚", "晚饭"};
  auto trie = build_trie(std::span<const std::string>(lex));
  const auto got = spans(match_words(trie, utf8::decode("今天晚饭")));
  const std::vector<oracle::Span> want{{U"今天", 1, 2}, {U"天晚", 2, 3}, {U"晚饭", 3, 4}};
  EXPECT_EQ(got, want);
}

TEST(Match, OverlappingExample) {
  const std::vector<std::u32string> lex{U"ab", U"bc", U"cab"};
  auto trie = build_trie(std::span<const std::u32string>(lex));
  const std::vector<oracle::Span> want{{U"ab", 1, 2}, {U"bc", 2, 3}, {U"cab", 3, 5}, {U"ab", 4, 5}};
  EXPECT_EQ(spans(match_words(trie, U"abcab")), want);
  EXPECT_EQ(spans(match_words(trie, U"abcab")), oracle::brute_force_matches(U"abcab", lex));
}

TEST(Match, SingleCharacterWordsIgnored) {
  const std::vector<std::u32string> lex{U"a", U"ab"};
  auto trie = build_trie(std::span<const std::u32string>(lex));
  const auto ms = match_words(trie, U"aab");
  ASSERT_EQ(ms.size(), 1u);
  EXPECT_EQ(ms[0].head, 2);
}

TEST(Match, AgreesWithBruteForce) {
  std::mt19937_64 gen(12);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::u32string> lex;
    const auto count = std::uniform_int_distribution<int>(0, 30)(gen);
    for (int i = 0; i < count; ++i) lex.push_back(random_word(gen, 4, 1, 5));
    const auto text = random_word(gen, 4, 0, 50);
    auto trie = build_trie(std::span<const std::u32string>(lex));
    ASSERT_EQ(spans(match_words(trie, text, 4)), oracle::brute_force_matches(text, lex, 4)) << "trial " << trial;
  }
}

TEST(Match, WordIdsPointAtTrieWords) {
  const std::vector<std::u32string> lex{U"ab", U"bc", U"cab"};
  auto trie = build_trie(std::span<const std::u32string>(lex));
  for (const auto& m : match_words(trie, U"abcab")) EXPECT_EQ(trie.find(m.surface), m.word_id);
}

TEST(NonWord, EmptyMatchesGetSpanningEntry) {
  const auto ms = append_non_word({}, 5);
  ASSERT_EQ(ms.size(), 1u);
  EXPECT_TRUE(ms[0].is_non_word());
  EXPECT_EQ(ms[0].head, 1);
  EXPECT_EQ(ms[0].tail, 5);
  EXPECT_EQ(utf8::encode(ms[0].surface), kNonWordToken);
}

TEST(NonWord, AppendedLast) {
  const std::vector<std::u32string> lex{U"ab", U"bc", U"cab"};
  auto trie = build_trie(std::span<const std::u32string>(lex));
  auto ms = match_words(trie, U"abcab");
  ASSERT_EQ(ms.size(), 4u);
  ms = append_non_word(std::move(ms), 5);
  EXPECT_EQ(ms.size(), 5u);
  EXPECT_TRUE(ms.back().is_non_word());
}

TEST(Embeddings, LoadsWithAndWithoutHeader) {
  testing_support::TempDir dir;
  const std::string body = "ab 0.1 0.2 0.3 0.4\nbc -1 2 3.5 4\n天晚 0.125 0 0 1e-3\n";
  auto plain = load_embeddings(dir.write("plain.vec", body));
  auto headed = load_embeddings(dir.write("headed.vec", "3 4\n" + body));
  EXPECT_EQ(plain.rows(), 5u);
  EXPECT_EQ(plain.dim, 4u);
  EXPECT_EQ(plain.tokens, headed.tokens);
  EXPECT_EQ(plain.matrix, headed.matrix);
  const int r = plain.row_of("天晚");
  ASSERT_GE(r, 0);
  EXPECT_EQ(std::vector<double>(plain.row(r).begin(), plain.row(r).end()), (std::vector<double>{0.125, 0, 0, 1e-3}));
  EXPECT_EQ(plain.tokens[static_cast<std::size_t>(plain.non_word_row)], kNonWordToken);
  for (double v : plain.row(plain.non_word_row)) EXPECT_EQ(v, 0.0);
}

TEST(Embeddings, MalformedFilesRejected) {
  testing_support::TempDir dir;
  EXPECT_THROW(load_embeddings(dir.write("ragged.vec", "ab 1 2 3\nbc 1 2\n")), DataError);
  EXPECT_THROW(load_embeddings(dir.write("empty.vec", "")), DataError);
  EXPECT_THROW(load_embeddings(dir.write("bad.vec", "ab 1 x\n")), DataError);
  EXPECT_THROW(load_embeddings(dir.file("missing.vec")), DataError);
  try {
    load_embeddings(dir.write("ragged2.vec", "ab 1 2 3\nbc 1 2\n"));
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
  }
}

TEST(Embeddings, WordListSkipsVectorsAndHeader) {
  testing_support::TempDir dir;
  const auto words = load_word_list(dir.write("words.vec", "2 3\nab 1 2 3\n\n天晚 4 5 6\n"));
  EXPECT_EQ(words, (std::vector<std::string>{"ab", "天晚"}));
}

TEST(Stats, OverlappingExample) {
  const std::vector<std::u32string> lex{U"ab", U"bc", U"cab"};
  auto trie = build_trie(std::span<const std::u32string>(lex));
  const std::vector<std::u32string> corpus{U"abcab"};
  const auto st = match_stats(corpus, trie);
  EXPECT_EQ(st.max_char_len, 5u);
  EXPECT_EQ(st.max_matched_len, 4u);
  EXPECT_DOUBLE_EQ(st.avg_matched_len, 4.0);
}

TEST(Stats, EmptyLexiconHasNoMatches) {
  const std::vector<std::u32string> none;
  auto trie = build_trie(std::span<const std::u32string>(none));
  const std::vector<std::u32string> corpus{U"abcab", U"xyz"};
  EXPECT_DOUBLE_EQ(match_stats(corpus, trie).avg_matched_len, 0.0);
}

TEST(Stats, GrowsWithLexiconSupersets) {
  SyntheticConfig cfg;
  cfg.seed = 3;
  const auto data = gen_synthetic(cfg);
  const auto corpus = corpus_chars(data.train);
  std::vector<std::string> lex;
  double prev = 0.0;
  for (std::size_t k = 0; k <= data.lexicon.size(); k += 20) {
    lex.assign(data.lexicon.begin(), data.lexicon.begin() + static_cast<std::ptrdiff_t>(std::min(k, data.lexicon.size())));
    const double avg = match_stats(corpus, build_trie(std::span<const std::string>(lex))).avg_matched_len;
    EXPECT_GE(avg, prev);
    prev = avg;
  }
  EXPECT_GT(prev, 0.0);
}

TEST(Utf8, RoundTripAndRejectsInvalid) {
  const std::string s = "今天 ab 😀";
  EXPECT_EQ(utf8::encode(utf8::decode(s)), s);
  EXPECT_EQ(utf8::decode(s).size(), 7u);
  EXPECT_THROW(utf8::decode("\xC3"), utf8::DecodeError);
  EXPECT_THROW(utf8::decode("\xED\xA0\x80"), utf8::DecodeError);
}
