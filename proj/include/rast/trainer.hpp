#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rast/corpus.hpp"
#include "rast/generator.hpp"
#include "rast/optim.hpp"
#include "rast/retriever.hpp"
#include "rast/reward.hpp"
#include "rast/sampler.hpp"

namespace rast {

// ---------------------------------------------------------------------------
// Template corruption for the supervised stage

enum class Corruption { kNone, kReplaceMask, kAddNouns, kDeleteMask, kSwapTemplate };

struct CorruptionConfig {
  double replace_mask_with_entity = 0.15;
  double add_nouns = 0.15;
  double delete_mask = 0.15;
  double swap_template = 0.15;
  Tokens entity_pool;
  Tokens noun_pool;

  double none() const { return 1.0 - replace_mask_with_entity - add_nouns - delete_mask - swap_template; }
  void validate() const;
};

/// Entity and noun strings from the tagged training contexts.
void fill_corruption_pools(CorruptionConfig& config, const std::vector<Sample>& samples, const Tagger& tagger,
                           const WordLists& words = WordLists::builtin());

/// Draws one mechanism (or none) and applies it. Mechanisms that need a
/// missing ingredient (a mask, a pool entry, a second template) fall through
/// to none. `applied` reports what actually happened.
Template corrupt_template(const Template& z0, const CorruptionConfig& config, const TemplateCorpus& corpus,
                          std::mt19937_64& rng, Corruption* applied = nullptr);

// ---------------------------------------------------------------------------
// Configuration

struct TrainerConfig {
  std::string preset = "toy";
  std::uint64_t seed = 13;
  double lambda = 0.5;
  double kl_beta = 0.01;
  std::size_t clusters = 3;  // templates per training sample
  double top_p = 0.9;
  std::size_t top_k = 30;
  std::size_t outputs = 5;  // N at inference
  double generator_lr = 10.0;
  double retriever_lr = 1e-3;
  double sl_lr = 5e-2;
  std::size_t sl_epochs = 6;
  std::size_t rl_epochs = 3;
  double sl_warmup_ratio = 0.1;
  double rl_warmup_ratio = 0.2;
  double weight_decay = 0.0;
  std::string rl_optimizer = "sgd";  // generator update in the RL stage: "sgd" or "adam"
  std::size_t batch_size = 8;
  std::size_t train_pool = 100;
  std::size_t eval_pool = 500;
  std::size_t max_input_len = 128;
  std::size_t max_len = 24;
  double clip_norm = 1.0;
  std::size_t retriever_dim = 128;
  std::size_t retriever_buckets = 4096;
  unsigned hash_bits = 18;
  double dedup_threshold = 0.8;
  double oracle_eps = 0.05;
  double corrupt_replace_mask = 0.15;
  double corrupt_add_nouns = 0.15;
  double corrupt_delete_mask = 0.15;
  double corrupt_swap_template = 0.15;

  /// "toy", "squad1", "squad2" or "newsqa". Throws InvalidArgument.
  static TrainerConfig from_preset(const std::string& name);
  static std::vector<std::string> preset_names();

  void validate() const;
  nlohmann::json to_json() const;
  /// Overlays the keys of a flat object; unknown keys throw ValidationError.
  void apply_json(const nlohmann::json& overrides);

  DecodeOptions decode() const { return {max_len, max_input_len}; }
  CorruptionConfig corruption() const;
};

// ---------------------------------------------------------------------------
// Supervised stage

struct SlExample {
  ContextAnswer x;
  Question y;
  Tokens style;  // empty for the vanilla model
};

/// Token-averaged cross-entropy of the gold questions. When grad is
/// non-empty, the gradient of that loss is added to it.
double sl_loss(const SequenceModel& model, const std::vector<SlExample>& batch, const DecodeOptions& decode,
               std::span<double> grad = {});

/// One optimizer step on sl_loss; returns the loss before the update.
double sl_step(SequenceModel& model, const std::vector<SlExample>& batch, Adam<double>& optimizer, double lr,
               const DecodeOptions& decode, double clip_norm);

// ---------------------------------------------------------------------------
// Policy-gradient stage

/// Reward of the greedy decode under the same (x, style).
RewardBreakdown greedy_baseline(const SequenceModel& model, const QaBackend& qa, const ContextAnswer& x,
                                const Template& style, double lambda, const DecodeOptions& decode);

/// Mean over the steps of `ids` of KL(p_ref || p_cur) at each prefix.
double kl_penalty(const SequenceModel& reference, const SequenceModel& current, const ModelInput& input,
                  std::span<const TokenId> ids);
/// grad += scale · ∇θ kl_penalty (θ = current).
void accumulate_kl_grad(const SequenceModel& reference, const SequenceModel& current, const ModelInput& input,
                        std::span<const TokenId> ids, double scale, std::span<double> grad);

/// One-sample score-function estimate of ∇θ E[r]: grad += (reward − baseline) ∇θ log p(ids).
void reinforce_estimate(const SequenceModel& model, const ModelInput& input, std::span<const TokenId> ids,
                        double reward, double baseline, std::span<double> grad);

struct PolicyGradientItem {
  std::string id;
  ContextAnswer x;
  Template z0;
  DiversitySample sample;
  std::vector<RewardBreakdown> rewards;    // one per sampled pair
  std::vector<RewardBreakdown> baselines;  // greedy decode under the same style
};

struct PolicyGradientBatch {
  std::vector<PolicyGradientItem> items;
  std::size_t pair_count() const;
};

struct RlDiagnostics {
  std::size_t pairs = 0;
  double mean_reward = 0.0;
  double mean_r_cons = 0.0;
  double mean_r_divs = 0.0;
  double mean_baseline = 0.0;
  double kl = 0.0;
  double generator_grad_norm = 0.0;
  double retriever_grad_norm = 0.0;
};

/// Mutable training state owned by one trainer.
struct Learner {
  std::unique_ptr<SequenceModel> model;            // style transfer, being trained
  std::unique_ptr<const SequenceModel> reference;  // frozen post-supervised snapshot
  DualEncoder encoder;
  Adam<double> generator_opt;
  Adam<float> query_opt;
  Adam<float> candidate_opt;

  Learner(std::unique_ptr<SequenceModel> trained, DualEncoder enc, double weight_decay = 0.0);
};

/// Samples styles and questions for each (x, z0) and scores them.
PolicyGradientBatch collect_batch(const Learner& learner, const QaBackend& qa, const RetrievalIndex& index,
                                  const std::vector<const Sample*>& samples, const std::vector<Template>& queries,
                                  const TrainerConfig& config, std::mt19937_64& rng);

/// Generator: −mean (r − b) ∇ log p_θ + β ∇KL. Retriever: −mean r ∇ log p_φ
/// over each item's pool. Both clipped to clip_norm and stepped with their own
/// learning rates scaled by lr_factor; the encoder version is bumped.
/// Throws StaleIndex if the encoder moved since the batch was sampled.
RlDiagnostics rl_step(Learner& learner, const PolicyGradientBatch& batch, const TrainerConfig& config,
                      double lr_factor);

// ---------------------------------------------------------------------------
// Full training

struct TrainData {
  std::vector<Sample> train;
  std::vector<Sample> dev;
  std::shared_ptr<const TemplateCorpus> corpus;
};

struct SupervisedModels {
  std::unique_ptr<SequenceModel> vanilla;
  std::unique_ptr<SequenceModel> style;
  double vanilla_loss = 0.0;  // last-epoch mean
  double style_loss = 0.0;
};

/// Vocabulary over the training contexts, questions and corpus templates.
std::shared_ptr<const Vocabulary> build_vocabulary(const std::vector<Sample>& train, const TemplateCorpus& corpus);

/// Copy of `model` whose vocabulary also covers the tokens of `samples`.
std::unique_ptr<SequenceModel> adapt_vocabulary(const SequenceModel& model, const std::vector<Sample>& samples);

/// Query template for a question; "?" when it is empty or everything would be masked.
Template query_template(const Question& question, const ContextAnswer& x, const Tagger& tagger);

SupervisedModels supervised_stage(const TrainData& data, const TrainerConfig& config, const Tagger& tagger);

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_reward = 0.0;
  double mean_r_cons = 0.0;
  double mean_r_divs = 0.0;
  double kl = 0.0;
  double oracle_bleu_dev = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_oracle_bleu = 0.0;
};

using ProgressFn = std::function<void(const std::string&)>;

/// RL epochs from the supervised models. Writes under out_dir:
/// checkpoints/epoch-N/{style.*, retriever.*}, checkpoints/best/,
/// history.csv and rewards.jsonl.
TrainResult rl_stage(const TrainData& data, const SequenceModel& vanilla, std::unique_ptr<SequenceModel> style,
                     DualEncoder encoder, const QaBackend& qa, const TrainerConfig& config, const Tagger& tagger,
                     const std::filesystem::path& out_dir, const ProgressFn& progress = {});

}  // namespace rast
