#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "rast/dataset.hpp"
#include "rast/reward.hpp"

namespace rast {

/// Clipped n-gram counts for one hypothesis, orders 1..4.
struct BleuStats {
  std::array<std::size_t, 4> correct{};
  std::array<std::size_t, 4> total{};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;  // closest reference length, shorter on ties

  BleuStats& operator+=(const BleuStats& other);
};

BleuStats bleu_stats(const Tokens& hypothesis, const std::vector<Tokens>& references);

/// BLEU in [0, 100] from aggregated statistics with exponential smoothing of
/// zero-match orders. With effective_order, orders past the hypothesis length
/// are dropped from the geometric mean. No matches at all gives 0.
double bleu_from_stats(const BleuStats& stats, bool effective_order);

/// Sentence BLEU (effective order on).
double sentence_bleu(const Tokens& hypothesis, const std::vector<Tokens>& references);
/// Corpus BLEU over aligned hypotheses and reference lists.
double corpus_bleu(const std::vector<Tokens>& hypotheses, const std::vector<std::vector<Tokens>>& references);

double bleu4(const Question& hypothesis, const std::vector<Question>& references);

/// Ranked outputs for one evaluation sample.
struct TopNOutputs {
  std::string id;
  std::vector<Question> hypotheses;  // rank order, rank 1 first
  std::vector<Question> references;
  ContextAnswer input;
};

double top1_bleu(const std::vector<TopNOutputs>& outputs);
/// Corpus BLEU over the per-sample hypothesis with the best sentence BLEU (earliest rank on ties).
double oracle_bleu(const std::vector<TopNOutputs>& outputs);
/// Mean sentence BLEU over ordered pairs within each sample, then over
/// samples. nullopt when no sample has two or more outputs.
std::optional<double> pairwise_bleu(const std::vector<TopNOutputs>& outputs);

struct OverallBleu {
  double value = 0.0;
  bool perfect_diversity = false;  // pairwise was 0; value is meaningless
};

/// top1 * oracle / pairwise.
OverallBleu overall_bleu(double top1, double oracle, double pairwise);

/// Lowercased, punctuation stripped, whitespace tokenized.
Tokens normalize_answer(const std::string& s);
double exact_match(const std::string& prediction, const std::string& gold);
double token_f1(const std::string& prediction, const std::string& gold);

struct EmF1 {
  double em = 0.0;  // [0, 100]
  double f1 = 0.0;
};

/// QA over every output, scored against the gold answer, averaged over the
/// outputs of a sample and then over samples. Unanswerable predictions score 0.
EmF1 qa_em_f1(const std::vector<TopNOutputs>& outputs, const QaBackend& qa);

struct MetricReport {
  std::size_t samples = 0;
  std::size_t outputs_per_sample = 0;
  double top1 = 0.0;
  double oracle = 0.0;
  std::optional<double> pairwise;
  std::optional<double> overall;
  bool perfect_diversity = false;
  std::optional<double> em;
  std::optional<double> f1;

  std::string to_json() const;  // fixed key order, 6 decimals
  std::string table() const;
};

/// qa may be null, in which case em/f1 are absent.
MetricReport evaluate_outputs(const std::vector<TopNOutputs>& outputs, const QaBackend* qa);

}  // namespace rast
