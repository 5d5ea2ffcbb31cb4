#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "rast/generator.hpp"

namespace rast {

/// Attention-free recurrent question generator over hashed sparse features.
///
/// The recurrent state after each emitted token is (last two tokens, emitted
/// set, template pointer). The template pointer walks the style template:
/// it advances when the emitted token matches the template token under it
/// ("[MASK]" matches any entity-like token) and skips one template token on a
/// look-ahead match. Entity-like tokens (capitalized or numeric) are scored
/// through their role relative to the highlighted answer rather than their
/// identity, which gives the model a copy mechanism over the context.
///
/// logit(v) = Σ_f w[f] over the hashed features f of (state, v); tokens that
/// are neither question words seen in training nor context tokens get -inf.
class FeatureModel : public SequenceModel {
 public:
  FeatureModel(std::shared_ptr<const Vocabulary> vocab, std::vector<TokenId> output_words,
               unsigned hash_bits = 18);

  /// Output words are the non-entity tokens of `questions`.
  static std::unique_ptr<FeatureModel> for_questions(std::shared_ptr<const Vocabulary> vocab,
                                                     const std::vector<Question>& questions,
                                                     unsigned hash_bits = 18);

  std::string backend_name() const override { return "feature-rnn"; }
  const Vocabulary& vocab() const override { return *vocab_; }
  std::vector<double> next_log_probs(const ModelInput& input,
                                     std::span<const TokenId> prefix) const override;
  void backprop_logits(const ModelInput& input, std::span<const TokenId> prefix,
                       std::span<const double> d_logits, std::span<double> grad) const override;
  std::span<double> parameters() override { return weights_; }
  std::span<const double> parameters() const override { return weights_; }
  std::unique_ptr<SequenceModel> clone() const override;
  void save(const std::filesystem::path& dir, const std::string& name) const override;
  std::unique_ptr<SequenceModel> with_vocabulary(std::shared_ptr<const Vocabulary> vocab) const override;

  static std::unique_ptr<FeatureModel> load(const std::filesystem::path& dir, const std::string& name);

  bool is_entity(TokenId id) const { return entity_[static_cast<std::size_t>(id)]; }

 private:
  struct InputView;
  struct StepState;

  InputView parse(const ModelInput& input) const;
  StepState advance(const InputView& view, std::span<const TokenId> prefix) const;
  std::vector<TokenId> candidates(const InputView& view) const;
  void features(const InputView& view, const StepState& state, TokenId v,
                std::vector<std::uint32_t>& out) const;

  std::shared_ptr<const Vocabulary> vocab_;
  std::vector<TokenId> output_words_;
  std::vector<bool> entity_;
  std::vector<bool> numeric_;
  std::vector<bool> output_word_;
  unsigned hash_bits_;
  std::vector<double> weights_;
};

}  // namespace rast
