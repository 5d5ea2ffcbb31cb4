#include <set>

#include <gtest/gtest.h>

#include "rast/corpus.hpp"
#include "rast/synthbench.hpp"
#include "test_support.hpp"

namespace rast::synth {
namespace {

TEST(SyntheticWorld, SameSeedSameDataset) {
  testing::TempDir dir("world");
  write_dataset(dir.path() / "a.jsonl", generate_world(4, 50));
  write_dataset(dir.path() / "b.jsonl", generate_world(4, 50));
  EXPECT_EQ(testing::slurp(dir.path() / "a.jsonl"), testing::slurp(dir.path() / "b.jsonl"));
  write_dataset(dir.path() / "c.jsonl", generate_world(5, 50));
  EXPECT_NE(testing::slurp(dir.path() / "a.jsonl"), testing::slurp(dir.path() / "c.jsonl"));
}

TEST(SyntheticWorld, StreamsAreIndependentSplits) {
  const SyntheticWorld world(4);
  const auto train = world.sample(20, 0), test = world.sample(20, 2);
  EXPECT_NE(train[0].id, test[0].id);
  EXPECT_NE(train[0].input.context_raw, test[0].input.context_raw);
}

TEST(SyntheticWorld, SingleSamplePassesValidation) {
  testing::TempDir dir("one");
  const auto one = generate_world(8, 1);
  ASSERT_EQ(one.size(), 1u);
  write_dataset(dir.path() / "d.jsonl", one);
  const auto back = read_dataset(dir.path() / "d.jsonl");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].input.answer_tokens(), one[0].input.answer_tokens());
}

TEST(SyntheticWorld, CorpusHasSeveralStyleFamilies) {
  const auto corpus = build_corpus(generate_world(3, 500), RuleTagger(), 0.8).corpus;
  // A family is the set of interrogatives a template opens with.
  std::set<std::string> families;
  for (const auto& z : corpus.templates) {
    std::string key;
    for (const auto& t : z.tokens)
      if (WordLists::builtin().is_interrogative(t)) key += t + " ";
    families.insert(key);
  }
  EXPECT_GE(families.size(), 3u);
}

TEST(SyntheticWorld, ParseRecoversEveryRenderedFact) {
  const SyntheticWorld world(6);
  for (const auto& s : world.sample(100)) {
    const auto facts = world.parse_context(s.input.context);
    ASSERT_GE(facts.size(), 2u);
    ASSERT_LE(facts.size(), 5u);
    bool answer_is_a_value = false;
    for (const auto& f : facts)
      for (const auto& [slot, value] : f.values) answer_is_a_value |= value == s.input.answer;
    EXPECT_TRUE(answer_is_a_value) << s.id;
  }
}

class Oracle : public ::testing::Test {
 protected:
  SyntheticWorld world_{11};
  OracleQa qa_{world_, 0.05};
};

TEST_F(Oracle, GoldQuestionsAreAnsweredWithConfidence) {
  for (const auto& s : world_.sample(200)) {
    const auto pred = qa_.predict(s.input.context, s.question);
    ASSERT_TRUE(pred.answer.has_value()) << s.question.raw;
    EXPECT_EQ(*pred.answer, s.input.answer_tokens()) << s.question.raw;
    EXPECT_NEAR(qa_answer_loss(qa_, s.input.context, s.question, s.input.answer_tokens()), -std::log(0.95), 1e-12);
  }
}

TEST_F(Oracle, EveryStyleOfAFactGetsTheSameAnswer) {
  for (const auto& s : world_.sample(50)) {
    for (const auto& fact : world_.parse_context(s.input.context)) {
      for (const auto& [slot, value] : fact.values) {
        for (auto style : world_.styles_for(fact.relation, slot)) {
          const auto q = Question::from_tokens(world_.render_question(world_.styles()[style], fact));
          const auto pred = qa_.predict(s.input.context, q);
          ASSERT_TRUE(pred.answer.has_value()) << q.raw;
          EXPECT_EQ(*pred.answer, Tokens{value}) << q.raw;
        }
      }
    }
  }
}

TEST_F(Oracle, ScrambledAndForeignQuestionsAreUnanswerable) {
  const auto s = world_.sample(1)[0];
  auto scrambled = s.question.tokens;
  std::reverse(scrambled.begin(), scrambled.end());
  EXPECT_FALSE(qa_.predict(s.input.context, Question::from_tokens(scrambled)).answer);
  EXPECT_FALSE(qa_.predict(s.input.context, Question::from_string("who founded Zzyx ?")).answer);
  EXPECT_FALSE(qa_.predict(s.input.context, Question::from_string("who founded")).answer);
  EXPECT_FALSE(qa_.predict(s.input.context, Question{}).answer);
}

TEST_F(Oracle, EpsilonMustBeAProbability) {
  const OracleQa bad(world_, 0.0);
  const auto s = world_.sample(1)[0];
  EXPECT_TRUE(testing::throws_code(
      [&] { bad.answer_log_probs(s.input.context, s.question, s.input.answer_tokens()); },
      ErrorCode::kInvalidArgument));
}

}  // namespace
}  // namespace rast::synth
