#include "rast/reward.hpp"

#include <cmath>

#include "rast/error.hpp"

namespace rast {

double qa_answer_loss(const QaBackend& qa, const Tokens& context, const Question& question,
                      const Tokens& answer) {
  RAST_REQUIRE(!answer.empty(), ErrorCode::kInvalidArgument, "answer must be non-empty");
  const auto logp = qa.answer_log_probs(context, question, answer);
  RAST_REQUIRE(logp.size() == answer.size(), ErrorCode::kDimensionMismatch,
               "QA backend returned the wrong number of token log-probs");
  double sum = 0.0;
  for (double v : logp) {
    RAST_REQUIRE(std::isfinite(v), ErrorCode::kInvalidArgument, "QA backend returned a non-finite loss");
    sum -= v;
  }
  return sum / static_cast<double>(answer.size());
}

double consistency_from_loss(double loss) { return std::exp(-loss); }

double consistency_reward(const QaBackend& qa, const Tokens& context, const Question& question,
                          const Tokens& answer) {
  return consistency_from_loss(qa_answer_loss(qa, context, question, answer));
}

double diversity_reward(const Question& question, const Template& style) {
  return jaccard(token_set(question.tokens), style.unmasked_set());
}

RewardBreakdown total_reward(double consistency, double diversity, double lambda) {
  RAST_REQUIRE(lambda >= 0.0 && lambda <= 1.0, ErrorCode::kInvalidArgument, "lambda must lie in [0, 1]");
  return {consistency, diversity, consistency + lambda * diversity, lambda};
}

RewardBreakdown score_pair(const QaBackend& qa, const ContextAnswer& x, const Question& question,
                           const Template* style, double lambda) {
  // An empty generation cannot be judged; it gets the QA model's view of "?".
  const Question judged = question.empty() ? Question::from_string("?") : question;
  const double cons = consistency_reward(qa, x.context, judged, x.answer_tokens());
  const double div = style ? diversity_reward(question, *style) : 0.0;
  return total_reward(cons, div, lambda);
}

}  // namespace rast
