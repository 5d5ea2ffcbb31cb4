#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "rast/corpus.hpp"
#include "test_support.hpp"

namespace rast {
namespace {

using testing::make_sample;
using testing::throws_code;

Template masked(const std::string& question, const std::string& context) {
  const auto q = Question::from_string(question);
  return extract_template(q, token_set(tokenize(context)), RuleTagger().tag(q.tokens));
}

TEST(Tokenize, JoinRoundTripsNormalizedText) {
  std::mt19937_64 rng(5);
  const Tokens words{"who", "[MASK]", "Norton", "?", "1935", "<HL>"};
  for (int trial = 0; trial < 200; ++trial) {
    Tokens t(1 + rng() % 8);
    for (auto& w : t) w = words[rng() % words.size()];
    const auto s = join(t);
    EXPECT_EQ(tokenize(s), t);
    EXPECT_EQ(join(tokenize(s)), s);
  }
  EXPECT_EQ(tokenize("  a\tb \n c "), (Tokens{"a", "b", "c"}));
}

TEST(WordLists, MembershipIgnoresCase) {
  const auto& w = WordLists::builtin();
  EXPECT_TRUE(w.is_interrogative("What"));
  EXPECT_TRUE(w.is_stopword("THE"));
  EXPECT_FALSE(w.is_kept("founded"));
}

TEST(ExtractTemplate, MasksEntitiesPresentInContext) {
  EXPECT_EQ(masked("who founded Norton in 1935 ?", "Norton opened in 1935 .").text(),
            "who founded [MASK] in [MASK] ?");
}

TEST(ExtractTemplate, NothingToMaskLeavesQuestionIntact) {
  EXPECT_EQ(masked("how do tides work ?", "seas rise and fall").text(), "how do tides work ?");
}

TEST(ExtractTemplate, NounPhraseCollapsesToOneMask) {
  EXPECT_EQ(masked("what is the tallest building ?", "towers rise").text(), "what is [MASK] ?");
}

TEST(ExtractTemplate, InterrogativesSurviveInsideSpans) {
  const auto q = Question::from_string("which Tower is tall ?");
  std::vector<TaggerSpan> spans{{0, 2, SpanKind::kEntity}};
  EXPECT_EQ(extract_template(q, {}, spans).text(), "which [MASK] is tall ?");
}

TEST(ExtractTemplate, ContextMatchIsCaseInsensitive) {
  EXPECT_EQ(masked("when did it rain ?", "RAIN fell").text(), "when did it [MASK] ?");
}

TEST(ExtractTemplate, AllMaskedThrows) {
  EXPECT_TRUE(throws_code([] { masked("Norton Arko", "Norton met Arko"); }, ErrorCode::kAllMasked));
  EXPECT_TRUE(throws_code([] { Template::parse("[MASK] [MASK]"); }, ErrorCode::kAllMasked));
  EXPECT_TRUE(throws_code([] { Template::parse(""); }, ErrorCode::kAllMasked));
}

TEST(ExtractTemplate, OutputInvariantsHoldOnRandomQuestions) {
  std::mt19937_64 rng(17);
  const Tokens pool{"who", "what", "Norton", "the", "big", "city", "of", "1935", "?", "founded", "Arko"};
  const auto ctx = token_set(tokenize("Norton founded Arko in 1935 in the big city"));
  for (int trial = 0; trial < 500; ++trial) {
    Tokens t(1 + rng() % 9);
    for (auto& w : t) w = pool[rng() % pool.size()];
    const auto q = Question::from_tokens(t);
    try {
      const auto z = extract_template(q, ctx, RuleTagger().tag(q.tokens));
      ASSERT_FALSE(z.tokens.empty());
      EXPECT_LT(z.mask_count(), z.tokens.size());
      for (std::size_t i = 1; i < z.tokens.size(); ++i)
        EXPECT_FALSE(z.tokens[i] == kMaskToken && z.tokens[i - 1] == kMaskToken) << z.text();
      for (const auto& tok : z.tokens) {
        if (tok == kMaskToken) continue;
        EXPECT_NE(std::find(t.begin(), t.end(), tok), t.end());
      }
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kAllMasked);
    }
  }
}

TEST(Jaccard, IdentityAndDisjoint) {
  const TokenSet a{"what", "is"}, b{"who", "was"};
  EXPECT_EQ(jaccard(a, a), 1.0);
  EXPECT_EQ(jaccard(a, b), 0.0);
  EXPECT_EQ(jaccard(TokenSet{}, TokenSet{}), 1.0);
}

TEST(Jaccard, CountsMaskAsAToken) {
  EXPECT_DOUBLE_EQ(jaccard(Template::parse("what is [MASK]"), Template::parse("what [MASK] called")), 0.5);
}

TEST(Deduplicate, ExactDuplicatesCollapse) {
  const auto z = Template::parse("who is [MASK] ?");
  EXPECT_EQ(deduplicate({z, z}, 0.8).size(), 1u);
}

TEST(Deduplicate, KeepsTemplatesBelowThreshold) {
  const std::vector<Template> zs{Template::parse("a b c d"), Template::parse("a b e")};
  ASSERT_DOUBLE_EQ(jaccard(zs[0], zs[1]), 0.4);
  EXPECT_EQ(deduplicate(zs, 0.8).size(), 2u);
}

TEST(Deduplicate, GreedyFirstSeenWins) {
  const auto first = Template::parse("t0 t1 t2 t3 t4 t5 t6 t7 t8 t9");
  const auto second = Template::parse("t0 t1 t2 t3 t4 t5 t6 t7 t8");
  const auto third = Template::parse("t0 u1 u2 u3 u4 u5 u6 u7 u8 u9");
  ASSERT_DOUBLE_EQ(jaccard(first, second), 0.9);
  ASSERT_LE(jaccard(first, third), 0.5);
  ASSERT_LE(jaccard(second, third), 0.5);
  const auto c = deduplicate({first, second, third}, 0.8);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.templates[0], first);
  EXPECT_EQ(c.templates[1], third);
}

TEST(Deduplicate, IsIdempotentAndBounded) {
  std::mt19937_64 rng(3);
  const Tokens words{"what", "is", "[MASK]", "who", "was", "in", "?", "of", "year"};
  std::vector<Template> zs;
  while (zs.size() < 300) {
    Tokens t(2 + rng() % 5);
    for (auto& w : t) w = words[rng() % words.size()];
    try {
      zs.push_back(Template::from_tokens(t));
    } catch (const Error&) {
    }
  }
  for (double threshold : {0.3, 0.5, 0.8}) {
    const auto once = deduplicate(zs, threshold);
    for (std::size_t i = 0; i < once.size(); ++i)
      for (std::size_t j = i + 1; j < once.size(); ++j)
        EXPECT_LE(jaccard(once.templates[i], once.templates[j]), threshold);
    const auto twice = deduplicate(once.templates, threshold);
    EXPECT_EQ(twice.templates, once.templates);
  }
}

std::vector<Sample> hand_dataset() {
  return {
      make_sample("s1", "Norton opened a shop in 1935 .", "1935", "when did Norton open a shop ?"),
      make_sample("s2", "Lina wrote Dusk in 1901 .", "Lina", "who wrote Dusk ?"),
      make_sample("s3", "Lina wrote Dusk in 1901 .", "1901", "when was Dusk written ?"),
      make_sample("s4", "Omar wrote Rain in 1877 .", "1877", "when was Rain written ?"),
      make_sample("s5", "the river runs north .", "north", "where does the river run ?"),
      make_sample("s6", "Mira was born in Tesk .", "Tesk", "where was Mira born ?"),
      make_sample("s7", "Mira was born in Tesk .", "Mira", "who was born in Tesk ?"),
      make_sample("s8", "Dell founded Arko .", "Dell", "Dell founded Arko"),
      make_sample("s9", "Pell built a bridge .", "Pell", "who built a bridge ?"),
      make_sample("s10", "Tam sold the farm .", "Tam", "who sold the farm to Kay ?"),
  };
}

TEST(BuildCorpus, HandBuiltDatasetMatchesReference) {
  const auto result = build_corpus(hand_dataset(), RuleTagger(), 0.8);
  EXPECT_EQ(result.skipped, 1u);
  const std::vector<std::pair<std::string, std::string>> expected{
      {"when did [MASK] open [MASK] ?", "s1"}, {"who [MASK] ?", "s2"},
      {"when was [MASK] written ?", "s3"},     {"where does [MASK] ?", "s5"},
      {"where was [MASK] ?", "s6"},            {"who was [MASK] in [MASK] ?", "s7"},
      {"who [MASK] to [MASK] ?", "s10"},
  };
  ASSERT_EQ(result.corpus.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_EQ(result.corpus.templates[i].text(), expected[i].first);
    EXPECT_EQ(result.corpus.templates[i].source_id, expected[i].second);
  }
}

TEST(BuildCorpus, SingleSampleGivesOneTemplate) {
  auto data = hand_dataset();
  data.resize(1);
  EXPECT_EQ(build_corpus(data, RuleTagger(), 0.8).corpus.size(), 1u);
}

TEST(BuildCorpus, DuplicatedQuestionsShrinkTheCorpus) {
  std::vector<Sample> data(4, hand_dataset()[1]);
  EXPECT_LT(build_corpus(data, RuleTagger(), 0.8).corpus.size(), data.size());
}

TEST(BuildCorpus, AllMaskedDatasetIsEmptyResult) {
  const std::vector<Sample> data{hand_dataset()[7]};
  EXPECT_TRUE(throws_code([&] { build_corpus(data, RuleTagger(), 0.8); }, ErrorCode::kEmptyResult));
}

TEST(CorpusFile, WriteThenReadPreservesOrder) {
  testing::TempDir dir("corpus");
  const auto corpus = build_corpus(hand_dataset(), RuleTagger(), 0.8).corpus;
  write_corpus(dir.path() / "c.jsonl", corpus);
  const auto back = read_corpus(dir.path() / "c.jsonl");
  EXPECT_EQ(back.templates, corpus.templates);
  EXPECT_EQ(back.templates.back().source_id, "s10");
}

TEST(Dataset, AnswerMustSitAtItsOffset) {
  EXPECT_TRUE(throws_code([] { make_context_answer("a b c", "b", 0); }, ErrorCode::kAnswerNotInContext));
  EXPECT_TRUE(throws_code([] { make_context_answer("abc d", "b", 1); }, ErrorCode::kAnswerNotInContext));
  const auto x = make_context_answer("a b c", "b c", 2);
  EXPECT_EQ(x.answer_begin, 1u);
  EXPECT_EQ(x.answer_end, 3u);
}

TEST(Dataset, MalformedLineNamesTheLine) {
  testing::TempDir dir("dataset");
  {
    std::ofstream out(dir.path() / "d.jsonl");
    out << R"({"context":"a b","answer":"b","answer_start":2,"question":"q ?"})" << '\n';
    out << R"({"context":"a b","answer":"b"})" << '\n';
  }
  try {
    read_dataset(dir.path() / "d.jsonl");
    FAIL() << "expected ValidationError";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kValidation);
    EXPECT_NE(std::string(e.what()).find('2'), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace rast
