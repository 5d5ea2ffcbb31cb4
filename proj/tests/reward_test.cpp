#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "rast/reward.hpp"
#include "rast/synthbench.hpp"
#include "test_support.hpp"

namespace rast {
namespace {

using testing::ConstantQa;
using testing::throws_code;

const Tokens kContext = tokenize("Lina wrote Dusk in 1901 .");
const Tokens kAnswer = tokenize("1901");

TEST(QaAnswerLoss, CertainBackendHasZeroLoss) {
  EXPECT_EQ(qa_answer_loss(ConstantQa(1.0), kContext, Question::from_string("q ?"), kAnswer), 0.0);
}

TEST(QaAnswerLoss, UniformBackendHasLogV) {
  for (double v : {2.0, 7.0, 50.0})
    EXPECT_NEAR(qa_answer_loss(ConstantQa(1.0 / v), kContext, Question::from_string("q ?"), tokenize("a b c")),
                std::log(v), 1e-12);
}

TEST(QaAnswerLoss, RuleOracleMatchesItsDeclaredDistribution) {
  const synth::SyntheticWorld world(1);
  const synth::OracleQa qa(world, 0.05);
  // 6 distinct context tokens
  const auto gold = Question::from_string("when did Lina write Dusk ?");
  EXPECT_NEAR(qa_answer_loss(qa, kContext, gold, kAnswer), -std::log(0.95), 1e-12);
  EXPECT_NEAR(qa_answer_loss(qa, kContext, gold, tokenize("Dusk")), -std::log(0.05 / 5.0), 1e-12);
  EXPECT_NEAR(qa_answer_loss(qa, kContext, Question::from_string("Dusk when ? Lina"), kAnswer), std::log(6.0), 1e-12);
}

TEST(QaAnswerLoss, RejectsNonFiniteAndEmpty) {
  EXPECT_TRUE(throws_code([] { qa_answer_loss(ConstantQa(0.0), kContext, Question::from_string("q"), kAnswer); },
                          ErrorCode::kInvalidArgument));
  EXPECT_TRUE(throws_code([] { qa_answer_loss(ConstantQa(1.0), kContext, Question::from_string("q"), {}); },
                          ErrorCode::kInvalidArgument));
}

TEST(Consistency, ExpOfNegativeLoss) {
  EXPECT_EQ(consistency_from_loss(0.0), 1.0);
  EXPECT_EQ(consistency_from_loss(std::log(2.0)), 0.5);
  EXPECT_NEAR(consistency_from_loss(2.0), 0.1353352832366127, 1e-15);
}

TEST(Diversity, JaccardAgainstUnmaskedTemplate) {
  const auto z = Template::parse("what is [MASK]");
  EXPECT_EQ(diversity_reward(Question::from_string("is what"), z), 1.0);
  EXPECT_EQ(diversity_reward(Question::from_string("who was born"), z), 0.0);
  EXPECT_EQ(diversity_reward(Question::from_string("what is the capital"), z), 0.5);
}

TEST(TotalReward, LinearCombination) {
  EXPECT_DOUBLE_EQ(total_reward(0.5, 0.4, 0.5).total, 0.7);
  EXPECT_EQ(total_reward(0.3, 0.9, 0.0).total, 0.3);
  EXPECT_EQ(total_reward(1.0, 1.0, 1.0).total, 2.0);
  EXPECT_TRUE(throws_code([] { total_reward(1.0, 1.0, 1.5); }, ErrorCode::kInvalidArgument));
  EXPECT_TRUE(throws_code([] { total_reward(1.0, 1.0, -0.1); }, ErrorCode::kInvalidArgument));
}

TEST(ScorePair, CombinesBothTerms) {
  const auto x = make_context_answer("Lina wrote Dusk in 1901 .", "1901", 19);
  const auto z = Template::parse("when did [MASK] ?");
  const auto r = score_pair(ConstantQa(0.5), x, Question::from_string("when did Lina write Dusk ?"), &z, 0.5);
  EXPECT_DOUBLE_EQ(r.consistency, 0.5);
  EXPECT_DOUBLE_EQ(r.diversity, 3.0 / 6.0);
  EXPECT_DOUBLE_EQ(r.total, 0.75);
  const auto no_style = score_pair(ConstantQa(0.5), x, Question::from_string("q"), nullptr, 0.5);
  EXPECT_EQ(no_style.diversity, 0.0);
}

TEST(ScorePair, EmptyQuestionIsStillScored) {
  const auto x = make_context_answer("a b", "b", 2);
  EXPECT_DOUBLE_EQ(score_pair(ConstantQa(0.25), x, Question{}, nullptr, 0.0).total, 0.25);
}

}  // namespace
}  // namespace rast
