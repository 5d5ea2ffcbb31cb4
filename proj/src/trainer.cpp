#include "rast/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "rast/error.hpp"
#include "rast/feature_model.hpp"
#include "rast/metrics.hpp"

namespace rast {

namespace {

bool is_word(const std::string& t) {
  return std::any_of(t.begin(), t.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)); });
}

std::vector<double> probs_of(const std::vector<double>& logp) {
  std::vector<double> p(logp.size());
  for (std::size_t i = 0; i < logp.size(); ++i) p[i] = std::exp(logp[i]);
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Corruption

void CorruptionConfig::validate() const {
  for (double p : {replace_mask_with_entity, add_nouns, delete_mask, swap_template})
    RAST_REQUIRE(p >= 0.0 && p <= 1.0, ErrorCode::kValidation, "corruption probabilities must lie in [0, 1]");
  RAST_REQUIRE(none() >= -1e-12, ErrorCode::kValidation, "corruption probabilities sum past 1");
}

void fill_corruption_pools(CorruptionConfig& config, const std::vector<Sample>& samples, const Tagger& tagger,
                           const WordLists& words) {
  std::set<std::string> entities, nouns;
  for (const auto& s : samples) {
    const auto& c = s.input.context;
    for (const auto& span : tagger.tag(c)) {
      if (span.kind == SpanKind::kEntity) {
        entities.insert(join(Tokens(c.begin() + span.start, c.begin() + span.end)));
      } else {
        for (std::size_t i = span.start; i < span.end; ++i)
          if (!words.is_kept(c[i]) && is_word(c[i])) nouns.insert(c[i]);
      }
    }
  }
  config.entity_pool.assign(entities.begin(), entities.end());
  config.noun_pool.assign(nouns.begin(), nouns.end());
}

Template corrupt_template(const Template& z0, const CorruptionConfig& config, const TemplateCorpus& corpus,
                          std::mt19937_64& rng, Corruption* applied) {
  config.validate();
  std::discrete_distribution<int> draw({std::max(config.none(), 0.0), config.replace_mask_with_entity,
                                        config.add_nouns, config.delete_mask, config.swap_template});
  const auto mechanism = static_cast<Corruption>(draw(rng));
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  std::vector<std::size_t> masks;
  for (std::size_t i = 0; i < z0.tokens.size(); ++i)
    if (z0.tokens[i] == kMaskToken) masks.push_back(i);

  Corruption done = Corruption::kNone;
  Tokens t = z0.tokens;
  switch (mechanism) {
    case Corruption::kReplaceMask:
      if (!masks.empty() && !config.entity_pool.empty()) {
        const std::size_t at = masks[pick(masks.size())];
        const Tokens entity = tokenize(config.entity_pool[pick(config.entity_pool.size())]);
        t.erase(t.begin() + static_cast<std::ptrdiff_t>(at));
        t.insert(t.begin() + static_cast<std::ptrdiff_t>(at), entity.begin(), entity.end());
        done = mechanism;
      }
      break;
    case Corruption::kAddNouns:
      if (!config.noun_pool.empty()) {
        const std::size_t count = 1 + pick(2);
        for (std::size_t i = 0; i < count; ++i) {
          const std::size_t at = pick(t.size() + 1);
          t.insert(t.begin() + static_cast<std::ptrdiff_t>(at), config.noun_pool[pick(config.noun_pool.size())]);
        }
        done = mechanism;
      }
      break;
    case Corruption::kDeleteMask:
      if (!masks.empty()) {
        t.erase(t.begin() + static_cast<std::ptrdiff_t>(masks[pick(masks.size())]));
        done = mechanism;
      }
      break;
    case Corruption::kSwapTemplate: {
      std::vector<std::size_t> others;
      for (std::size_t i = 0; i < corpus.size(); ++i)
        if (!(corpus.templates[i] == z0)) others.push_back(i);
      if (!others.empty()) {
        t = corpus.templates[others[pick(others.size())]].tokens;
        done = mechanism;
      }
      break;
    }
    case Corruption::kNone:
      break;
  }
  if (applied) *applied = done;
  if (done == Corruption::kNone) return z0;
  try {
    return Template::from_tokens(std::move(t), z0.source_id);
  } catch (const Error&) {
    if (applied) *applied = Corruption::kNone;
    return z0;
  }
}

// ---------------------------------------------------------------------------
// Config

TrainerConfig TrainerConfig::from_preset(const std::string& name) {
  TrainerConfig c;
  c.preset = name;
  if (name == "toy") return c;
  // Published settings for the pretrained-scale runs.
  c.generator_lr = 1e-6;
  c.retriever_lr = 1e-7;
  c.sl_lr = 5e-4;
  c.sl_epochs = 5;
  c.rl_epochs = 7;
  c.weight_decay = 0.1;
  c.rl_optimizer = "adam";
  c.kl_beta = 0.1;
  if (name == "squad1") {
    c.max_input_len = 128;
    c.batch_size = 12;
  } else if (name == "squad2") {
    c.max_input_len = 512;
    c.batch_size = 8;
  } else if (name == "newsqa") {
    c.max_input_len = 1250;
    c.batch_size = 2;
    c.clusters = 2;
    c.lambda = 0.4;
    c.kl_beta = 0.05;
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown preset " + name);
  }
  return c;
}

std::vector<std::string> TrainerConfig::preset_names() { return {"toy", "squad1", "squad2", "newsqa"}; }

void TrainerConfig::validate() const {
  RAST_REQUIRE(lambda >= 0.0 && lambda <= 1.0, ErrorCode::kValidation, "lambda must lie in [0, 1]");
  RAST_REQUIRE(kl_beta >= 0.0, ErrorCode::kValidation, "kl_beta must be >= 0");
  RAST_REQUIRE(generator_lr > 0.0 && retriever_lr > 0.0 && sl_lr > 0.0, ErrorCode::kValidation,
               "learning rates must be > 0");
  RAST_REQUIRE(top_p > 0.0 && top_p <= 1.0, ErrorCode::kValidation, "top_p must lie in (0, 1]");
  RAST_REQUIRE(top_k >= 1 && clusters >= 1 && outputs >= 1 && batch_size >= 1, ErrorCode::kValidation,
               "top_k, clusters, outputs and batch_size must be >= 1");
  RAST_REQUIRE(train_pool >= 1 && eval_pool >= 1, ErrorCode::kValidation, "pool sizes must be >= 1");
  RAST_REQUIRE(dedup_threshold > 0.0 && dedup_threshold <= 1.0, ErrorCode::kValidation,
               "dedup_threshold must lie in (0, 1]");
  RAST_REQUIRE(oracle_eps > 0.0 && oracle_eps < 1.0, ErrorCode::kValidation, "oracle_eps must lie in (0, 1)");
  RAST_REQUIRE(sl_warmup_ratio >= 0.0 && sl_warmup_ratio <= 1.0 && rl_warmup_ratio >= 0.0 && rl_warmup_ratio <= 1.0,
               ErrorCode::kValidation, "warmup ratios must lie in [0, 1]");
  RAST_REQUIRE(rl_optimizer == "sgd" || rl_optimizer == "adam", ErrorCode::kValidation,
               "rl_optimizer must be sgd or adam");
  RAST_REQUIRE(clip_norm > 0.0, ErrorCode::kValidation, "clip_norm must be > 0");
  corruption().validate();
}

#define RAST_CONFIG_FIELDS(X)                                                                              \
  X(preset) X(seed) X(lambda) X(kl_beta) X(clusters) X(top_p) X(top_k) X(outputs) X(generator_lr)          \
  X(retriever_lr) X(sl_lr) X(sl_epochs) X(rl_epochs) X(sl_warmup_ratio) X(rl_warmup_ratio) X(weight_decay) X(rl_optimizer) \
  X(batch_size) X(train_pool) X(eval_pool) X(max_input_len) X(max_len) X(clip_norm) X(retriever_dim)      \
  X(retriever_buckets) X(hash_bits) X(dedup_threshold) X(oracle_eps) X(corrupt_replace_mask)              \
  X(corrupt_add_nouns) X(corrupt_delete_mask) X(corrupt_swap_template)

nlohmann::json TrainerConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
#define X(f) j[#f] = f;
  RAST_CONFIG_FIELDS(X)
#undef X
  return j;
}

void TrainerConfig::apply_json(const nlohmann::json& o) {
  RAST_REQUIRE(o.is_object(), ErrorCode::kValidation, "config must be a flat JSON object");
  for (auto it = o.begin(); it != o.end(); ++it) {
    const std::string& key = it.key();
    bool known = false;
    try {
#define X(f)                                 \
  if (key == #f) {                           \
    f = it.value().get<decltype(f)>();       \
    known = true;                            \
  }
      RAST_CONFIG_FIELDS(X)
#undef X
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kValidation, "config key " + key + ": " + e.what());
    }
    RAST_REQUIRE(known, ErrorCode::kValidation, "unknown config key " + key);
  }
}

CorruptionConfig TrainerConfig::corruption() const {
  CorruptionConfig c;
  c.replace_mask_with_entity = corrupt_replace_mask;
  c.add_nouns = corrupt_add_nouns;
  c.delete_mask = corrupt_delete_mask;
  c.swap_template = corrupt_swap_template;
  return c;
}

// ---------------------------------------------------------------------------
// Supervised stage

double sl_loss(const SequenceModel& model, const std::vector<SlExample>& batch, const DecodeOptions& decode,
               std::span<double> grad) {
  RAST_REQUIRE(!batch.empty(), ErrorCode::kInvalidArgument, "empty supervised batch");
  std::vector<ModelInput> inputs;
  std::vector<std::vector<TokenId>> targets;
  std::size_t tokens = 0;
  for (const auto& ex : batch) {
    inputs.push_back(format_input(model.vocab(), ex.x, ex.style, decode.max_input_len));
    targets.push_back(target_ids(model.vocab(), ex.y));
    tokens += targets.back().size();
  }
  double nll = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    nll -= sequence_log_prob(model, inputs[i], targets[i]);
    if (!grad.empty()) accumulate_sequence_grad(model, inputs[i], targets[i], -1.0 / static_cast<double>(tokens), grad);
  }
  return nll / static_cast<double>(tokens);
}

double sl_step(SequenceModel& model, const std::vector<SlExample>& batch, Adam<double>& optimizer, double lr,
               const DecodeOptions& decode, double clip_norm) {
  std::vector<double> grad(model.parameters().size(), 0.0);
  const double loss = sl_loss(model, batch, decode, grad);
  clip_by_global_norm<double>({std::span<double>(grad)}, clip_norm);
  optimizer.step(model.parameters(), grad, lr);
  return loss;
}

// ---------------------------------------------------------------------------
// Policy gradient

RewardBreakdown greedy_baseline(const SequenceModel& model, const QaBackend& qa, const ContextAnswer& x,
                                const Template& style, double lambda, const DecodeOptions& decode) {
  const auto g = generate_greedy(model, x, style.tokens, decode);
  return score_pair(qa, x, g.question, &style, lambda);
}

double kl_penalty(const SequenceModel& reference, const SequenceModel& current, const ModelInput& input,
                  std::span<const TokenId> ids) {
  if (ids.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const auto prefix = ids.first(t);
    const auto lr = reference.next_log_probs(input, prefix);
    const auto lc = current.next_log_probs(input, prefix);
    double kl = 0.0;
    for (std::size_t v = 0; v < lr.size(); ++v) {
      if (!std::isfinite(lr[v])) continue;
      kl += std::exp(lr[v]) * (lr[v] - lc[v]);
    }
    total += std::max(kl, 0.0);
  }
  return total / static_cast<double>(ids.size());
}

void accumulate_kl_grad(const SequenceModel& reference, const SequenceModel& current, const ModelInput& input,
                        std::span<const TokenId> ids, double scale, std::span<double> grad) {
  if (ids.empty() || scale == 0.0) return;
  const double s = scale / static_cast<double>(ids.size());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const auto prefix = ids.first(t);
    const auto pr = probs_of(reference.next_log_probs(input, prefix));
    const auto pc = probs_of(current.next_log_probs(input, prefix));
    std::vector<double> d(pc.size());
    for (std::size_t v = 0; v < pc.size(); ++v) d[v] = s * (pc[v] - pr[v]);
    current.backprop_logits(input, prefix, d, grad);
  }
}

void reinforce_estimate(const SequenceModel& model, const ModelInput& input, std::span<const TokenId> ids,
                        double reward, double baseline, std::span<double> grad) {
  accumulate_sequence_grad(model, input, ids, reward - baseline, grad);
}

std::size_t PolicyGradientBatch::pair_count() const {
  std::size_t n = 0;
  for (const auto& it : items) n += it.sample.pairs.size();
  return n;
}

Learner::Learner(std::unique_ptr<SequenceModel> trained, DualEncoder enc, double weight_decay)
    : model(std::move(trained)),
      reference(model->clone()),
      encoder(std::move(enc)),
      generator_opt(model->parameters().size(), 0.9, 0.999, 1e-8, weight_decay),
      query_opt(static_cast<std::size_t>(encoder.query().weights().size())),
      candidate_opt(static_cast<std::size_t>(encoder.candidate().weights().size())) {}

PolicyGradientBatch collect_batch(const Learner& learner, const QaBackend& qa, const RetrievalIndex& index,
                                  const std::vector<const Sample*>& samples, const std::vector<Template>& queries,
                                  const TrainerConfig& config, std::mt19937_64& rng) {
  RAST_REQUIRE(samples.size() == queries.size(), ErrorCode::kInvalidArgument, "one query template per sample");
  SamplerOptions so;
  so.pool_size = config.train_pool;
  so.k = config.clusters;
  so.top_p = config.top_p;
  so.top_k = config.top_k;
  so.mode = SampleMode::kTraining;
  so.decode = config.decode();

  PolicyGradientBatch batch;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    PolicyGradientItem item;
    item.id = samples[i]->id;
    item.x = samples[i]->input;
    item.z0 = queries[i];
    item.sample = diversity_sample(*learner.model, item.x, item.z0, index, learner.encoder, so, rng);
    for (const auto& pair : item.sample.pairs) {
      item.rewards.push_back(score_pair(qa, item.x, pair.question.question, &pair.style, config.lambda));
      item.baselines.push_back(
          greedy_baseline(*learner.model, qa, item.x, pair.style, config.lambda, so.decode));
    }
    batch.items.push_back(std::move(item));
  }
  return batch;
}

RlDiagnostics rl_step(Learner& learner, const PolicyGradientBatch& batch, const TrainerConfig& config,
                      double lr_factor) {
  RlDiagnostics d;
  d.pairs = batch.pair_count();
  if (d.pairs == 0) return d;
  for (const auto& item : batch.items)
    RAST_REQUIRE(item.sample.encoder_version == learner.encoder.version(), ErrorCode::kStaleIndex,
                 "retrieval pool was encoded with an older retriever");

  auto& model = *learner.model;
  std::vector<double> g(model.parameters().size(), 0.0);
  auto rg = RetrieverGrad::zeros_like(learner.encoder);
  const double inv = 1.0 / static_cast<double>(d.pairs);

  for (const auto& item : batch.items) {
    for (std::size_t j = 0; j < item.sample.pairs.size(); ++j) {
      const auto& pair = item.sample.pairs[j];
      const auto& r = item.rewards[j];
      const double b = item.baselines[j].total;
      const auto input = format_input(model.vocab(), item.x, pair.style.tokens, config.max_input_len);
      const auto& ids = pair.question.ids;
      accumulate_sequence_grad(model, input, ids, -(r.total - b) * inv, g);
      if (config.kl_beta > 0.0) accumulate_kl_grad(*learner.reference, model, input, ids, config.kl_beta * inv, g);
      d.kl += kl_penalty(*learner.reference, model, input, ids) * inv;
      accumulate_retrieval_log_prob_grad(learner.encoder, item.z0, item.sample.pool, pair.pool_index,
                                         -r.total * inv, rg);
      d.mean_reward += r.total * inv;
      d.mean_r_cons += r.consistency * inv;
      d.mean_r_divs += r.diversity * inv;
      d.mean_baseline += b * inv;
    }
  }

  d.generator_grad_norm = clip_by_global_norm<double>({std::span<double>(g)}, config.clip_norm);
  d.retriever_grad_norm = clip_by_global_norm<float>(
      {std::span<float>(rg.query.data(), static_cast<std::size_t>(rg.query.size())),
       std::span<float>(rg.candidate.data(), static_cast<std::size_t>(rg.candidate.size()))},
      config.clip_norm);

  if (config.rl_optimizer == "adam") {
    learner.generator_opt.step(model.parameters(), g, config.generator_lr * lr_factor);
  } else {
    auto params = model.parameters();
    const double lr = config.generator_lr * lr_factor;
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * g[i];
  }
  auto& qw = learner.encoder.query().weights();
  auto& cw = learner.encoder.candidate().weights();
  learner.query_opt.step(std::span<float>(qw.data(), static_cast<std::size_t>(qw.size())),
                         std::span<const float>(rg.query.data(), static_cast<std::size_t>(rg.query.size())),
                         config.retriever_lr * lr_factor);
  learner.candidate_opt.step(std::span<float>(cw.data(), static_cast<std::size_t>(cw.size())),
                             std::span<const float>(rg.candidate.data(), static_cast<std::size_t>(rg.candidate.size())),
                             config.retriever_lr * lr_factor);
  learner.encoder.bump_version();
  return d;
}

// ---------------------------------------------------------------------------
// Full training

std::shared_ptr<const Vocabulary> build_vocabulary(const std::vector<Sample>& train, const TemplateCorpus& corpus) {
  auto v = std::make_shared<Vocabulary>();
  for (const auto& s : train) {
    for (const auto& t : s.question.tokens) v->add(t);
    for (const auto& t : s.input.context) v->add(t);
  }
  for (const auto& z : corpus.templates)
    for (const auto& t : z.tokens) v->add(t);
  return v;
}

std::unique_ptr<SequenceModel> adapt_vocabulary(const SequenceModel& model, const std::vector<Sample>& samples) {
  auto v = std::make_shared<Vocabulary>(model.vocab());
  const std::size_t before = v->size();
  for (const auto& s : samples)
    for (const auto& t : s.input.context) v->add(t);
  if (v->size() == before) return model.clone();
  return model.with_vocabulary(std::move(v));
}

Template query_template(const Question& question, const ContextAnswer& x, const Tagger& tagger) {
  if (question.empty()) return Template::parse("?");
  try {
    return template_for(question, x, tagger);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kAllMasked) throw;
    return Template::parse("?");
  }
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

double train_supervised(SequenceModel& model, const std::vector<Sample>& train, const std::vector<Template>& z0,
                        const TrainerConfig& config, const TemplateCorpus* corpus, const CorruptionConfig* corruption,
                        std::mt19937_64& rng) {
  const std::size_t steps_per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
  LinearSchedule schedule(steps_per_epoch * config.sl_epochs, config.sl_warmup_ratio);
  Adam<double> opt(model.parameters().size(), 0.9, 0.999, 1e-8, config.weight_decay);
  std::size_t step = 0;
  double last = 0.0;
  for (std::size_t epoch = 0; epoch < config.sl_epochs; ++epoch) {
    const auto order = shuffled(train.size(), rng);
    double sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      std::vector<SlExample> batch;
      for (std::size_t k = b; k < std::min(order.size(), b + config.batch_size); ++k) {
        const auto& s = train[order[k]];
        Tokens style;
        if (corruption) style = corrupt_template(z0[order[k]], *corruption, *corpus, rng).tokens;
        batch.push_back({s.input, s.question, std::move(style)});
      }
      sum += sl_step(model, batch, opt, config.sl_lr * schedule.factor(step++), config.decode(), config.clip_norm);
    }
    last = sum / static_cast<double>(steps_per_epoch);
  }
  return last;
}

std::string csv_number(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(6) << v;
  return s.str();
}

}  // namespace

SupervisedModels supervised_stage(const TrainData& data, const TrainerConfig& config, const Tagger& tagger) {
  config.validate();
  RAST_REQUIRE(!data.train.empty(), ErrorCode::kValidation, "empty training split");
  RAST_REQUIRE(data.corpus && !data.corpus->empty(), ErrorCode::kEmptyCorpus, "empty template corpus");
  auto vocab = build_vocabulary(data.train, *data.corpus);
  std::vector<Question> questions;
  std::vector<Template> z0;
  for (const auto& s : data.train) {
    questions.push_back(s.question);
    z0.push_back(query_template(s.question, s.input, tagger));
  }
  auto corruption = config.corruption();
  fill_corruption_pools(corruption, data.train, tagger);

  SupervisedModels out;
  out.vanilla = FeatureModel::for_questions(vocab, questions, config.hash_bits);
  out.style = FeatureModel::for_questions(vocab, questions, config.hash_bits);
  std::mt19937_64 rng_v = stream_rng(config.seed, 101);
  std::mt19937_64 rng_s = stream_rng(config.seed, 102);
  out.vanilla_loss = train_supervised(*out.vanilla, data.train, z0, config, nullptr, nullptr, rng_v);
  out.style_loss = train_supervised(*out.style, data.train, z0, config, data.corpus.get(), &corruption, rng_s);
  return out;
}

TrainResult rl_stage(const TrainData& data, const SequenceModel& vanilla, std::unique_ptr<SequenceModel> style,
                     DualEncoder encoder, const QaBackend& qa, const TrainerConfig& config, const Tagger& tagger,
                     const std::filesystem::path& out_dir, const ProgressFn& progress) {
  config.validate();
  RAST_REQUIRE(!data.train.empty(), ErrorCode::kValidation, "empty training split");
  RAST_REQUIRE(data.corpus && !data.corpus->empty(), ErrorCode::kEmptyCorpus, "empty template corpus");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "checkpoints");

  std::vector<Template> z0;
  for (const auto& s : data.train) z0.push_back(query_template(s.question, s.input, tagger));

  Learner learner(std::move(style), std::move(encoder), 0.0);
  const std::size_t steps_per_epoch = (data.train.size() + config.batch_size - 1) / config.batch_size;
  LinearSchedule schedule(steps_per_epoch * config.rl_epochs, config.rl_warmup_ratio);
  std::mt19937_64 rng = stream_rng(config.seed, 201);

  const auto dev_vanilla = data.dev.empty() ? nullptr : adapt_vocabulary(vanilla, data.dev);
  InferenceOptions inf;
  inf.n = config.outputs;
  inf.pool_size = config.eval_pool;
  inf.top_p = config.top_p;
  inf.top_k = config.top_k;
  inf.decode = config.decode();
  inf.seed = config.seed;

  std::ofstream rewards_log(out_dir / "rewards.jsonl");
  std::ofstream history_csv(out_dir / "history.csv");
  RAST_REQUIRE(rewards_log.good() && history_csv.good(), ErrorCode::kIo, "cannot write training logs");
  history_csv << "epoch,mean_reward,mean_r_cons,mean_r_divs,kl,oracle_bleu_dev\n";

  TrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.rl_epochs; ++epoch) {
    // Rebuilt once per epoch; pools are re-encoded live inside the sampler.
    const auto index = build_index(data.corpus, learner.encoder);
    const auto order = shuffled(data.train.size(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t pairs = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      std::vector<const Sample*> batch_samples;
      std::vector<Template> batch_queries;
      for (std::size_t k = b; k < std::min(order.size(), b + config.batch_size); ++k) {
        batch_samples.push_back(&data.train[order[k]]);
        batch_queries.push_back(z0[order[k]]);
      }
      const auto batch = collect_batch(learner, qa, index, batch_samples, batch_queries, config, rng);
      for (const auto& item : batch.items)
        for (std::size_t j = 0; j < item.sample.pairs.size(); ++j) {
          nlohmann::json line;
          line["id"] = item.id;
          line["template"] = item.sample.pairs[j].style.text();
          line["question"] = item.sample.pairs[j].question.question.raw;
          line["r_cons"] = item.rewards[j].consistency;
          line["r_divs"] = item.rewards[j].diversity;
          line["r_total"] = item.rewards[j].total;
          rewards_log << line.dump() << '\n';
        }
      const auto diag = rl_step(learner, batch, config, schedule.factor(step++));
      const double w = static_cast<double>(diag.pairs);
      rec.mean_reward += diag.mean_reward * w;
      rec.mean_r_cons += diag.mean_r_cons * w;
      rec.mean_r_divs += diag.mean_r_divs * w;
      rec.kl += diag.kl * w;
      pairs += diag.pairs;
    }
    if (pairs > 0) {
      const double inv = 1.0 / static_cast<double>(pairs);
      rec.mean_reward *= inv;
      rec.mean_r_cons *= inv;
      rec.mean_r_divs *= inv;
      rec.kl *= inv;
    }

    if (dev_vanilla) {
      const auto dev_index = build_index(data.corpus, learner.encoder);
      const auto dev_style = adapt_vocabulary(*learner.model, data.dev);
      const auto results = generate_top_n(*dev_vanilla, *dev_style, dev_index, learner.encoder, data.dev, inf, tagger);
      std::vector<TopNOutputs> outs;
      for (std::size_t i = 0; i < results.size(); ++i) {
        TopNOutputs o;
        o.id = results[i].id;
        for (const auto& q : results[i].outputs) o.hypotheses.push_back(q.question);
        o.references = {data.dev[i].question};
        o.input = data.dev[i].input;
        outs.push_back(std::move(o));
      }
      rec.oracle_bleu_dev = oracle_bleu(outs);
    }

    const auto dir = out_dir / "checkpoints" / ("epoch-" + std::to_string(epoch));
    learner.model->save(dir, "style");
    learner.encoder.save(dir);
    if (result.history.empty() || rec.oracle_bleu_dev > result.best_oracle_bleu) {
      result.best_epoch = epoch;
      result.best_oracle_bleu = rec.oracle_bleu_dev;
      const auto best = out_dir / "checkpoints" / "best";
      fs::remove_all(best);
      fs::create_directories(best);
      for (const auto& f : fs::directory_iterator(dir)) fs::copy_file(f.path(), best / f.path().filename());
    }
    result.history.push_back(rec);
    history_csv << rec.epoch << ',' << csv_number(rec.mean_reward) << ',' << csv_number(rec.mean_r_cons) << ','
                << csv_number(rec.mean_r_divs) << ',' << csv_number(rec.kl) << ','
                << csv_number(rec.oracle_bleu_dev) << '\n';
    history_csv.flush();
    if (progress) {
      std::ostringstream msg;
      msg << std::fixed << std::setprecision(4) << "rl epoch " << epoch << ": reward " << rec.mean_reward
          << " r_cons " << rec.mean_r_cons << " r_divs " << rec.mean_r_divs << " kl " << rec.kl
          << " dev oracle BLEU " << std::setprecision(2) << rec.oracle_bleu_dev;
      progress(msg.str());
    }
  }
  return result;
}

}  // namespace rast
