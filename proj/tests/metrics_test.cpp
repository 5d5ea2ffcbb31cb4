#include <cmath>
#include <fstream>
#include <random>

#include <gtest/gtest.h>
#include <json.hpp>

#include "rast/metrics.hpp"
#include "test_support.hpp"

namespace rast {
namespace {

using testing::FixedAnswerQa;
using testing::GoldQa;

Tokens t(const std::string& s) { return tokenize(s); }

nlohmann::json golden() {
  std::ifstream in(std::string(RAST_TEST_DATA_DIR) + "/bleu_golden.json");
  return nlohmann::json::parse(in);
}

TEST(Bleu, ExactMatchIsHundred) {
  EXPECT_DOUBLE_EQ(sentence_bleu(t("who founded the company ?"), {t("who founded the company ?")}), 100.0);
}

TEST(Bleu, NoSharedUnigramsIsZero) {
  EXPECT_EQ(sentence_bleu(t("a b c d"), {t("e f g h")}), 0.0);
  EXPECT_EQ(sentence_bleu({}, {t("e f")}), 0.0);
}

TEST(Bleu, SmoothedHandComputation) {
  // precisions 3/4, 2/3, 1/2 and a smoothed 1/2 for the missing 4-gram
  EXPECT_NEAR(sentence_bleu(t("a b c d"), {t("a b c e")}), 100.0 * std::pow(0.125, 0.25), 1e-9);
}

TEST(Bleu, MatchesReferenceScorerOnGoldenPairs) {
  const auto g = golden();
  ASSERT_EQ(g["pairs"].size(), 50u);
  std::vector<Tokens> hyps;
  std::vector<std::vector<Tokens>> firsts;
  for (const auto& p : g["pairs"]) {
    std::vector<Question> refs;
    for (const auto& r : p["references"]) refs.push_back(Question::from_string(r.get<std::string>()));
    const auto hyp = Question::from_string(p["hypothesis"].get<std::string>());
    EXPECT_NEAR(bleu4(hyp, refs), p["bleu"].get<double>(), 0.01) << p["hypothesis"];
    hyps.push_back(hyp.tokens);
    firsts.push_back({refs[0].tokens});
  }
  EXPECT_NEAR(corpus_bleu(hyps, firsts), g["corpus_first_reference"].get<double>(), 0.01);
}

TopNOutputs sample_outputs(std::vector<std::string> hyps, std::vector<std::string> refs) {
  TopNOutputs o;
  for (auto& h : hyps) o.hypotheses.push_back(Question::from_string(h));
  for (auto& r : refs) o.references.push_back(Question::from_string(r));
  o.input = make_context_answer("red car", "red car", 0);
  return o;
}

TEST(PairwiseBleu, IdenticalOutputsGiveHundred) {
  EXPECT_DOUBLE_EQ(*pairwise_bleu({sample_outputs({"a b c d", "a b c d", "a b c d"}, {"x"})}), 100.0);
}

TEST(PairwiseBleu, DisjointOutputsGiveZero) {
  EXPECT_EQ(*pairwise_bleu({sample_outputs({"a b", "c d", "e f"}, {"x"})}), 0.0);
}

TEST(PairwiseBleu, TwoOutputsAverageBothDirections) {
  const auto o = sample_outputs({"a b c d e", "a b c"}, {"x"});
  const double forward = sentence_bleu(t("a b c d e"), {t("a b c")});
  const double backward = sentence_bleu(t("a b c"), {t("a b c d e")});
  // backward: exact precisions with effective order 3, brevity penalty exp(1 - 5/3)
  EXPECT_NEAR(backward, 100.0 * std::exp(1.0 - 5.0 / 3.0), 1e-9);
  EXPECT_NEAR(*pairwise_bleu({o}), (forward + backward) / 2.0, 1e-12);
}

TEST(PairwiseBleu, UndefinedBelowTwoOutputs) {
  EXPECT_FALSE(pairwise_bleu({sample_outputs({"a b"}, {"x"})}).has_value());
  EXPECT_FALSE(pairwise_bleu({}).has_value());
}

TEST(PairwiseBleu, HundredExactlyWhenAllOutputsAgree) {
  std::mt19937_64 rng(8);
  const Tokens words{"who", "what", "is", "was", "born", "?"};
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::string> hyps;
    const std::size_t n = 2 + rng() % 3;
    for (std::size_t i = 0; i < n; ++i) {
      Tokens q(1 + rng() % 5);
      for (auto& w : q) w = words[rng() % 3];
      hyps.push_back(join(q));
    }
    const bool identical = std::all_of(hyps.begin(), hyps.end(), [&](auto& h) { return h == hyps[0]; });
    const double p = *pairwise_bleu({sample_outputs(hyps, {"x"})});
    EXPECT_EQ(p == 100.0, identical) << p;
  }
}

TEST(OracleBleu, NeverBelowTopOneForSingleLongSamples) {
  // With one sample of 4+ token hypotheses, corpus and sentence BLEU coincide.
  std::mt19937_64 rng(9);
  const Tokens words{"who", "what", "is", "was", "born", "in", "?"};
  auto q = [&] {
    Tokens t(4 + rng() % 5);
    for (auto& w : t) w = words[rng() % words.size()];
    return join(t);
  };
  for (int trial = 0; trial < 500; ++trial) {
    const std::vector<TopNOutputs> outs{sample_outputs({q(), q(), q()}, {q()})};
    EXPECT_GE(oracle_bleu(outs), top1_bleu(outs));
  }
}

TEST(OracleBleu, PicksTheBestHypothesisPerSample) {
  const std::vector<TopNOutputs> outs{sample_outputs({"x y", "who was born in 1901 ?"}, {"who was born in 1901 ?"})};
  EXPECT_DOUBLE_EQ(oracle_bleu(outs), 100.0);
  EXPECT_EQ(top1_bleu(outs), 0.0);
}

TEST(OverallBleu, PublishedRows) {
  EXPECT_NEAR(overall_bleu(19.25, 23.23, 48.91).value, 9.14, 0.01);
  EXPECT_NEAR(overall_bleu(15.94, 24.90, 60.05).value, 6.61, 0.01);
  for (double x : {0.5, 12.0, 77.7}) EXPECT_NEAR(overall_bleu(x, x, x).value, x, 1e-12);
  EXPECT_TRUE(overall_bleu(10.0, 20.0, 0.0).perfect_diversity);
}

TEST(QaScores, TokenF1AndExactMatch) {
  EXPECT_EQ(exact_match("the red car", "red car"), 0.0);
  EXPECT_DOUBLE_EQ(token_f1("the red car", "red car"), 80.0);
  EXPECT_EQ(exact_match("Red car!", "red car"), 100.0);
  EXPECT_EQ(token_f1("blue", "red car"), 0.0);
  EXPECT_EQ(normalize_answer("  Hello, World. "), (Tokens{"hello", "world"}));
}

TEST(QaScores, GoldAndDisjointBackends) {
  const std::vector<TopNOutputs> outs{sample_outputs({"q1", "q2"}, {"q"})};
  const auto gold = qa_em_f1(outs, FixedAnswerQa("red car"));
  EXPECT_EQ(gold.em, 100.0);
  EXPECT_EQ(gold.f1, 100.0);
  const auto wrong = qa_em_f1(outs, FixedAnswerQa("blue boat"));
  EXPECT_EQ(wrong.em, 0.0);
  EXPECT_EQ(wrong.f1, 0.0);
  const auto none = qa_em_f1(outs, testing::ConstantQa(1.0));  // always unanswerable
  EXPECT_EQ(none.f1, 0.0);
}

TEST(MetricReport, HandComputedReport) {
  // Sample 1 reproduces its reference at rank 1, sample 2 only at rank 2.
  std::vector<TopNOutputs> outs{
      sample_outputs({"who was born in 1901 ?", "who was born in 1901 ?"}, {"who was born in 1901 ?"}),
      sample_outputs({"z z", "what city is it in ?"}, {"what city is it in ?"}),
  };
  const auto report = evaluate_outputs(outs, nullptr);
  EXPECT_EQ(report.samples, 2u);
  EXPECT_EQ(report.outputs_per_sample, 2u);
  EXPECT_DOUBLE_EQ(report.oracle, 100.0);
  EXPECT_DOUBLE_EQ(report.top1, corpus_bleu({t("who was born in 1901 ?"), t("z z")},
                                            {{t("who was born in 1901 ?")}, {t("what city is it in ?")}}));
  EXPECT_DOUBLE_EQ(*report.pairwise, 50.0);
  EXPECT_NEAR(*report.overall, report.top1 * 100.0 / 50.0, 1e-9);
  EXPECT_FALSE(report.em.has_value());
  EXPECT_EQ(report.to_json().find("\"samples\": 2, \"outputs_per_sample\": 2, \"top1_bleu\": "), 1u);
  EXPECT_NE(report.to_json().find("\"pairwise_bleu\": 50.000000"), std::string::npos);
  EXPECT_NE(report.to_json().find("\"em\": null"), std::string::npos);
  EXPECT_NE(report.table().find("Pairwise BLEU  50.00"), std::string::npos);
}

TEST(MetricReport, SingleOutputHasNoPairwiseOrOverall) {
  const auto report = evaluate_outputs({sample_outputs({"a b"}, {"a b"})}, nullptr);
  EXPECT_FALSE(report.pairwise.has_value());
  EXPECT_FALSE(report.overall.has_value());
  EXPECT_NE(report.table().find("n/a (N<2)"), std::string::npos);
}

TEST(MetricReport, PerfectDiversityIsFlagged) {
  const auto report = evaluate_outputs({sample_outputs({"a b", "c d"}, {"a b"})}, nullptr);
  EXPECT_TRUE(report.perfect_diversity);
  EXPECT_FALSE(report.overall.has_value());
  EXPECT_NE(report.table().find("perfect diversity"), std::string::npos);
}

}  // namespace
}  // namespace rast
