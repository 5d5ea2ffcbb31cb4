#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rast/corpus.hpp"
#include "rast/dataset.hpp"
#include "rast/text.hpp"

namespace rast {

/// Formatted model input: [template] <sep> [context with <HL> a <HL>].
struct ModelInput {
  std::vector<TokenId> tokens;
};

/// Autoregressive conditional sequence model. Implementations expose the
/// next-token log-distribution over the whole vocabulary (-inf for tokens the
/// model can never emit) and the backward pass of the logits, so training
/// code stays backend-agnostic.
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;

  virtual std::string backend_name() const = 0;
  virtual const Vocabulary& vocab() const = 0;

  virtual std::vector<double> next_log_probs(const ModelInput& input,
                                             std::span<const TokenId> prefix) const = 0;

  /// grad += Σ_v d_logits[v] · ∂logit_v/∂θ at this step. Entries of d_logits
  /// for masked tokens are ignored.
  virtual void backprop_logits(const ModelInput& input, std::span<const TokenId> prefix,
                               std::span<const double> d_logits, std::span<double> grad) const = 0;

  virtual std::span<double> parameters() = 0;
  virtual std::span<const double> parameters() const = 0;
  virtual std::unique_ptr<SequenceModel> clone() const = 0;

  /// Writes <dir>/<name>.bin (opaque) and <dir>/<name>.json (manifest).
  virtual void save(const std::filesystem::path& dir, const std::string& name) const = 0;

  /// Copy over a vocabulary that extends this one (same leading tokens), so
  /// tokens unseen in training get their own ids. Backends that cannot grow
  /// throw InvalidArgument.
  virtual std::unique_ptr<SequenceModel> with_vocabulary(std::shared_ptr<const Vocabulary> vocab) const;
};

/// Loads any shipped backend from its manifest.
std::unique_ptr<SequenceModel> load_model(const std::filesystem::path& dir, const std::string& name);

struct GenerationOutput {
  Question question;
  std::vector<TokenId> ids;              // generated ids, including the end token if emitted
  std::vector<double> token_log_probs;   // one per entry of ids
  double total_log_prob = 0.0;
};

/// Declared layout; an empty style yields "<sep> context...".
Tokens format_input_tokens(const ContextAnswer& x, const Tokens& style);
/// Encodes the layout, throwing InputTooLong past max_input_len.
ModelInput format_input(const Vocabulary& vocab, const ContextAnswer& x, const Tokens& style,
                        std::size_t max_input_len);

struct DecodeOptions {
  std::size_t max_len = 24;
  std::size_t max_input_len = 128;
};

GenerationOutput generate_greedy(const SequenceModel& model, const ContextAnswer& x,
                                 const Tokens& style, const DecodeOptions& opts = {});
GenerationOutput generate_greedy(const SequenceModel& model, const ModelInput& input,
                                 std::size_t max_len);

/// Per step: the nucleus is the shortest run of tokens, by descending
/// probability, whose mass reaches p; it is cut to at most top_k tokens,
/// renormalized and sampled. Log-probs reported are under the unrestricted model.
GenerationOutput sample_nucleus(const SequenceModel& model, const ContextAnswer& x,
                                const Tokens& style, double p, std::size_t top_k,
                                std::mt19937_64& rng, const DecodeOptions& opts = {});
GenerationOutput sample_nucleus(const SequenceModel& model, const ModelInput& input, double p,
                                std::size_t top_k, std::mt19937_64& rng, std::size_t max_len);

/// Σ_t log p(y_t | x, z, y_<t) including the end token.
double sequence_log_prob(const SequenceModel& model, const ContextAnswer& x, const Tokens& style,
                         const Question& y, const DecodeOptions& opts = {});
double sequence_log_prob(const SequenceModel& model, const ModelInput& input,
                         std::span<const TokenId> ids);

/// ids of y followed by the end token.
std::vector<TokenId> target_ids(const Vocabulary& vocab, const Question& y);

/// grad += scale · ∇θ log p(ids | input).
void accumulate_sequence_grad(const SequenceModel& model, const ModelInput& input,
                              std::span<const TokenId> ids, double scale, std::span<double> grad);

/// Greedy decode with an empty template segment.
Question vanilla_generate(const SequenceModel& vanilla, const ContextAnswer& x,
                          const DecodeOptions& opts = {});

/// Tabular policy: one row of logits per prefix state, where the state is the
/// last `depth` generated tokens. The input is ignored. Used for enumerable
/// oracle checks and hand-traced decoding tests.
class TabularModel : public SequenceModel {
 public:
  /// `alphabet` lists the emit-able tokens (the end token is appended if absent).
  TabularModel(std::shared_ptr<const Vocabulary> vocab, const Tokens& alphabet, std::size_t depth);

  std::string backend_name() const override { return "tabular"; }
  const Vocabulary& vocab() const override { return *vocab_; }
  std::vector<double> next_log_probs(const ModelInput& input,
                                     std::span<const TokenId> prefix) const override;
  void backprop_logits(const ModelInput& input, std::span<const TokenId> prefix,
                       std::span<const double> d_logits, std::span<double> grad) const override;
  std::span<double> parameters() override { return params_; }
  std::span<const double> parameters() const override { return params_; }
  std::unique_ptr<SequenceModel> clone() const override;
  void save(const std::filesystem::path& dir, const std::string& name) const override;

  /// Logits for the state reached by `prefix`, in alphabet order.
  void set_logits(std::span<const TokenId> prefix, const std::vector<double>& logits);
  std::size_t state_of(std::span<const TokenId> prefix) const;
  std::size_t num_states() const;
  const std::vector<TokenId>& alphabet() const { return alphabet_; }
  std::size_t depth() const { return depth_; }

 private:
  std::shared_ptr<const Vocabulary> vocab_;
  std::vector<TokenId> alphabet_;
  std::vector<int> digit_;  // vocab id -> alphabet position, -1 if absent
  std::size_t depth_;
  std::vector<double> params_;
};

}  // namespace rast
