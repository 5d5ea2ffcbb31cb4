#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rast/corpus.hpp"
#include "rast/dataset.hpp"

namespace rast {

struct RewardBreakdown {
  double consistency = 0.0;
  double diversity = 0.0;
  double total = 0.0;
  double lambda = 0.0;
};

struct QaPrediction {
  std::optional<Tokens> answer;  // nullopt: unanswerable
};

/// Generative QA judge.
class QaBackend {
 public:
  virtual ~QaBackend() = default;
  /// log p(a_i | c, y, a_<i) for each answer token (teacher forced).
  virtual std::vector<double> answer_log_probs(const Tokens& context, const Question& question,
                                               const Tokens& answer) const = 0;
  virtual QaPrediction predict(const Tokens& context, const Question& question) const = 0;
};

/// Mean negative log-likelihood of the answer tokens.
double qa_answer_loss(const QaBackend& qa, const Tokens& context, const Question& question,
                      const Tokens& answer);

/// exp(-loss).
double consistency_from_loss(double loss);
double consistency_reward(const QaBackend& qa, const Tokens& context, const Question& question,
                          const Tokens& answer);

/// Token-set Jaccard between the question and the template with "[MASK]" removed.
double diversity_reward(const Question& question, const Template& style);

RewardBreakdown total_reward(double consistency, double diversity, double lambda);

/// Consistency and diversity for one sampled (question, style) pair.
RewardBreakdown score_pair(const QaBackend& qa, const ContextAnswer& x, const Question& question,
                           const Template* style, double lambda);

}  // namespace rast
