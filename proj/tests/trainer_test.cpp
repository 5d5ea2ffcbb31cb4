#include <cmath>
#include <memory>
#include <random>

#include <gtest/gtest.h>

#include "rast/feature_model.hpp"
#include "rast/synthbench.hpp"
#include "rast/trainer.hpp"
#include "test_support.hpp"

namespace rast {
namespace {

using testing::ConstantQa;
using testing::throws_code;

CorruptionConfig only(Corruption c) {
  CorruptionConfig cfg;
  cfg.replace_mask_with_entity = c == Corruption::kReplaceMask;
  cfg.add_nouns = c == Corruption::kAddNouns;
  cfg.delete_mask = c == Corruption::kDeleteMask;
  cfg.swap_template = c == Corruption::kSwapTemplate;
  cfg.entity_pool = {"Lina Vos"};
  cfg.noun_pool = {"river"};
  return cfg;
}

TemplateCorpus three_templates() {
  TemplateCorpus c;
  c.templates = {Template::parse("what is [MASK] ?"), Template::parse("who [MASK] ?"), Template::parse("when ?")};
  return c;
}

TEST(Corruption, NoneLeavesTemplateUnchanged) {
  const auto z0 = Template::parse("what is [MASK] ?");
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    Corruption applied;
    EXPECT_EQ(corrupt_template(z0, only(Corruption::kNone), three_templates(), rng, &applied), z0);
    EXPECT_EQ(applied, Corruption::kNone);
  }
}

TEST(Corruption, DeleteMask) {
  std::mt19937_64 rng(1);
  EXPECT_EQ(corrupt_template(Template::parse("what is [MASK] ?"), only(Corruption::kDeleteMask), {}, rng).text(),
            "what is ?");
}

TEST(Corruption, ReplaceMaskWithEntity) {
  std::mt19937_64 rng(1);
  EXPECT_EQ(corrupt_template(Template::parse("what is [MASK] ?"), only(Corruption::kReplaceMask), {}, rng).text(),
            "what is Lina Vos ?");
}

TEST(Corruption, AddNounsInsertsPoolWords) {
  std::mt19937_64 rng(2);
  const auto z0 = Template::parse("what is [MASK] ?");
  for (int i = 0; i < 30; ++i) {
    const auto z = corrupt_template(z0, only(Corruption::kAddNouns), {}, rng);
    const auto added = z.tokens.size() - z0.tokens.size();
    EXPECT_GE(added, 1u);
    EXPECT_LE(added, 2u);
    EXPECT_EQ(static_cast<std::size_t>(std::count(z.tokens.begin(), z.tokens.end(), "river")), added);
  }
}

TEST(Corruption, SwapPicksAnotherCorpusMember) {
  std::mt19937_64 rng(3);
  const auto corpus = three_templates();
  for (int i = 0; i < 30; ++i) {
    const auto z = corrupt_template(corpus.templates[0], only(Corruption::kSwapTemplate), corpus, rng);
    EXPECT_NE(z, corpus.templates[0]);
    EXPECT_NE(std::find(corpus.templates.begin(), corpus.templates.end(), z), corpus.templates.end());
  }
}

TEST(Corruption, MissingIngredientFallsThrough) {
  std::mt19937_64 rng(4);
  Corruption applied;
  const auto no_mask = Template::parse("when ?");
  EXPECT_EQ(corrupt_template(no_mask, only(Corruption::kDeleteMask), {}, rng, &applied), no_mask);
  EXPECT_EQ(applied, Corruption::kNone);
  TemplateCorpus alone;
  alone.templates = {no_mask};
  EXPECT_EQ(corrupt_template(no_mask, only(Corruption::kSwapTemplate), alone, rng, &applied), no_mask);
  EXPECT_EQ(applied, Corruption::kNone);
}

TEST(Corruption, RatesAreValidated) {
  auto cfg = only(Corruption::kNone);
  cfg.add_nouns = 0.6;
  cfg.delete_mask = 0.6;
  EXPECT_TRUE(throws_code([&] { cfg.validate(); }, ErrorCode::kValidation));
  cfg.delete_mask = -0.1;
  EXPECT_TRUE(throws_code([&] { cfg.validate(); }, ErrorCode::kValidation));
}

TEST(Corruption, PoolsComeFromTaggedContexts) {
  CorruptionConfig cfg;
  fill_corruption_pools(cfg, {testing::make_sample("a", "Lina Vos met the old ferryman .", "Lina Vos", "who ?")},
                        RuleTagger());
  EXPECT_EQ(cfg.entity_pool, Tokens{"Lina Vos"});
  EXPECT_NE(std::find(cfg.noun_pool.begin(), cfg.noun_pool.end(), "ferryman"), cfg.noun_pool.end());
}

// Two-symbol tabular policy: emits "a" or the end token.
struct Coin {
  std::shared_ptr<Vocabulary> vocab = std::make_shared<Vocabulary>();
  std::unique_ptr<TabularModel> model;
  ContextAnswer x = make_context_answer("a b", "b", 2);
  Coin() {
    vocab->add("a");
    vocab->add("b");
    model = std::make_unique<TabularModel>(vocab, Tokens{"a"}, 1);
  }
  TokenId a() const { return vocab->id("a"); }
  TokenId end() const { return vocab->end_id(); }
};

TEST(SlLoss, CertainModelHasZeroLoss) {
  Coin c;
  c.model->set_logits(std::vector<TokenId>{}, {0.0, -INFINITY});
  c.model->set_logits(std::vector<TokenId>{c.a()}, {-INFINITY, 0.0});
  EXPECT_EQ(sl_loss(*c.model, {{c.x, Question::from_string("a"), {}}}, {}), 0.0);
}

TEST(SlLoss, UniformModelHasLogVPerToken) {
  const auto vocab = std::make_shared<Vocabulary>();
  for (const char* t : {"a", "b", "c"}) vocab->add(t);
  TabularModel model(vocab, Tokens{"a", "b", "c"}, 1);
  const auto x = make_context_answer("a b", "b", 2);
  EXPECT_NEAR(sl_loss(model, {{x, Question::from_string("a b c a"), {}}, {x, Question::from_string("c"), {}}}, {}),
              std::log(4.0), 1e-12);
}

TEST(SlLoss, TwoTokenHandTrace) {
  Coin c;
  c.model->set_logits(std::vector<TokenId>{}, {1.0, 0.0});
  c.model->set_logits(std::vector<TokenId>{c.a()}, {0.0, 2.0});
  // -(log σ(1) + log σ(2)) / 2
  const double expected = -(std::log(1.0 / (1.0 + std::exp(-1.0))) + std::log(1.0 / (1.0 + std::exp(-2.0)))) / 2.0;
  EXPECT_NEAR(sl_loss(*c.model, {{c.x, Question::from_string("a"), {}}}, {}), expected, 1e-12);
}

TEST(SlLoss, GradientMatchesFiniteDifferences) {
  const auto vocab = std::make_shared<Vocabulary>();
  for (const auto& t : tokenize("Lina wrote Dusk in 1901 . when did write ? who")) vocab->add(t);
  const auto x = make_context_answer("Lina wrote Dusk in 1901 .", "1901", 19);
  const std::vector<SlExample> batch{{x, Question::from_string("when did Lina write Dusk ?"), tokenize("when ?")},
                                     {x, Question::from_string("who wrote Dusk ?"), {}}};
  auto model = FeatureModel::for_questions(vocab, {batch[0].y, batch[1].y}, 10);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0.0, 0.3);
  for (auto& w : model->parameters()) w = normal(rng);
  std::vector<double> grad(model->parameters().size(), 0.0);
  sl_loss(*model, batch, {}, grad);
  auto params = model->parameters();
  std::size_t checked = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grad[i] == 0.0) continue;
    const double keep = params[i], h = 1e-5;
    params[i] = keep + h;
    const double up = sl_loss(*model, batch, {});
    params[i] = keep - h;
    const double down = sl_loss(*model, batch, {});
    params[i] = keep;
    EXPECT_NEAR(grad[i], (up - down) / (2 * h), 1e-7);
    ++checked;
  }
  EXPECT_GT(checked, 10u);
}

TEST(SlStep, ReducesLossOnItsBatch) {
  Coin c;
  Adam<double> opt(c.model->parameters().size());
  const std::vector<SlExample> batch{{c.x, Question::from_string("a a"), {}}};
  const double before = sl_loss(*c.model, batch, {});
  for (int i = 0; i < 20; ++i) sl_step(*c.model, batch, opt, 0.1, {}, 1.0);
  EXPECT_LT(sl_loss(*c.model, batch, {}), before);
}

TEST(KlPenalty, ClosedForms) {
  Coin ref, cur;
  const std::vector<TokenId> ids{ref.a()};
  EXPECT_EQ(kl_penalty(*ref.model, *ref.model, {}, ids), 0.0);
  cur.model->set_logits(std::vector<TokenId>{}, {std::log(0.9), std::log(0.1)});
  EXPECT_NEAR(kl_penalty(*ref.model, *cur.model, {}, ids), 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1),
              1e-12);
  EXPECT_NEAR(kl_penalty(*ref.model, *cur.model, {}, ids), 0.5108, 1e-4);
}

TEST(KlPenalty, GradientMatchesFiniteDifferences) {
  Coin ref, cur;
  ref.model->set_logits(std::vector<TokenId>{}, {0.3, -0.2});
  ref.model->set_logits(std::vector<TokenId>{ref.a()}, {1.0, 0.5});
  cur.model->set_logits(std::vector<TokenId>{}, {-0.4, 0.8});
  cur.model->set_logits(std::vector<TokenId>{cur.a()}, {0.1, 0.7});
  const std::vector<TokenId> ids{cur.a(), cur.a(), cur.end()};
  std::vector<double> grad(cur.model->parameters().size(), 0.0);
  accumulate_kl_grad(*ref.model, *cur.model, {}, ids, 1.0, grad);
  auto params = cur.model->parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i], h = 1e-6;
    params[i] = keep + h;
    const double up = kl_penalty(*ref.model, *cur.model, {}, ids);
    params[i] = keep - h;
    const double down = kl_penalty(*ref.model, *cur.model, {}, ids);
    params[i] = keep;
    EXPECT_NEAR(grad[i], (up - down) / (2 * h), 1e-8) << i;
  }
}

TEST(Reinforce, CenteredAdvantageGivesZeroGradient) {
  Coin c;
  c.model->set_logits(std::vector<TokenId>{}, {0.2, -0.1});
  std::vector<double> grad(c.model->parameters().size(), 0.0);
  reinforce_estimate(*c.model, {}, std::vector<TokenId>{c.a(), c.end()}, 0.7, 0.7, grad);
  for (double g : grad) EXPECT_EQ(g, 0.0);
  reinforce_estimate(*c.model, {}, std::vector<TokenId>{c.a(), c.end()}, 1.0, 0.0, grad);
  EXPECT_NE(grad[0], 0.0);
}

struct RlFixture {
  synth::SyntheticWorld world{5};
  std::vector<Sample> train = world.sample(6);
  std::shared_ptr<TemplateCorpus> corpus = std::make_shared<TemplateCorpus>(build_corpus(train, RuleTagger(), 0.8).corpus);
  std::shared_ptr<const Vocabulary> vocab = build_vocabulary(train, *corpus);
  DualEncoder encoder = DualEncoder::initialize(8, 64, 1);
  RetrievalIndex index = build_index(corpus, encoder);
  std::vector<const Sample*> batch_samples;
  std::vector<Template> queries;
  TrainerConfig config;

  RlFixture() {
    for (const auto& s : train) {
      batch_samples.push_back(&s);
      queries.push_back(query_template(s.question, s.input, RuleTagger()));
    }
  }
  std::unique_ptr<SequenceModel> model() const {
    std::vector<Question> qs;
    for (const auto& s : train) qs.push_back(s.question);
    auto m = FeatureModel::for_questions(vocab, qs, 12);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal(0.0, 0.4);
    for (auto& w : m->parameters()) w = normal(rng);
    return m;
  }
};

TEST(RlStep, ZeroAdvantageAndSingletonPoolsLeaveParametersAlone) {
  RlFixture f;
  f.config.lambda = 0.0;
  f.config.kl_beta = 0.0;
  f.config.train_pool = 1;
  f.config.clusters = 1;
  Learner learner(f.model(), f.encoder);
  const std::vector<double> before(learner.model->parameters().begin(), learner.model->parameters().end());
  const auto query_before = learner.encoder.query().weights();
  std::mt19937_64 rng(1);
  const ConstantQa qa(0.6);
  const auto batch = collect_batch(learner, qa, f.index, f.batch_samples, f.queries, f.config, rng);
  ASSERT_EQ(batch.pair_count(), f.train.size());
  for (const auto& item : batch.items) EXPECT_EQ(item.rewards[0].total, item.baselines[0].total);
  const auto diag = rl_step(learner, batch, f.config, 1.0);
  EXPECT_EQ(diag.generator_grad_norm, 0.0);
  EXPECT_EQ(diag.retriever_grad_norm, 0.0);
  EXPECT_TRUE(std::equal(before.begin(), before.end(), learner.model->parameters().begin()));
  EXPECT_EQ(learner.encoder.query().weights(), query_before);
  EXPECT_EQ(learner.encoder.version(), 1u);
}

TEST(RlStep, KlTermAloneMovesTheGeneratorOnlyWhenBetaIsPositive) {
  RlFixture f;
  f.config.lambda = 0.0;
  f.config.train_pool = 1;
  f.config.clusters = 1;
  for (double beta : {0.0, 0.5}) {
    f.config.kl_beta = beta;
    Learner learner(f.model(), f.encoder);
    // Move the policy away from its frozen reference so the penalty is active.
    for (auto& w : learner.model->parameters()) w *= 1.5;
    std::mt19937_64 rng(2);
    const auto batch = collect_batch(learner, ConstantQa(0.6), f.index, f.batch_samples, f.queries, f.config, rng);
    const auto diag = rl_step(learner, batch, f.config, 1.0);
    EXPECT_GT(diag.kl, 0.0);
    if (beta == 0.0) {
      EXPECT_EQ(diag.generator_grad_norm, 0.0);
    } else {
      EXPECT_GT(diag.generator_grad_norm, 0.0);
    }
  }
}

TEST(RlStep, RejectsBatchesFromAnOlderEncoder) {
  RlFixture f;
  Learner learner(f.model(), f.encoder);
  std::mt19937_64 rng(1);
  const auto batch = collect_batch(learner, ConstantQa(0.5), f.index, f.batch_samples, f.queries, f.config, rng);
  rl_step(learner, batch, f.config, 1.0);
  EXPECT_TRUE(throws_code([&] { rl_step(learner, batch, f.config, 1.0); }, ErrorCode::kStaleIndex));
}

TEST(RlStep, PositiveRewardRaisesRetrievalProbabilityOfChosenStyle) {
  RlFixture f;
  f.config.train_pool = 8;
  f.config.clusters = 2;
  f.config.kl_beta = 0.0;
  f.config.retriever_lr = 0.05;
  Learner learner(f.model(), f.encoder);
  std::mt19937_64 rng(6);
  const auto batch = collect_batch(learner, ConstantQa(0.9), f.index, {f.batch_samples[0]}, {f.queries[0]}, f.config, rng);
  const auto& item = batch.items[0];
  const auto before = retrieval_distribution(learner.encoder, item.z0, item.sample.pool);
  rl_step(learner, batch, f.config, 1.0);
  const auto after = retrieval_distribution(learner.encoder, item.z0, item.sample.pool);
  double mass_before = 0.0, mass_after = 0.0;
  for (const auto& pair : item.sample.pairs) {
    mass_before += before[pair.pool_index];
    mass_after += after[pair.pool_index];
  }
  EXPECT_GT(mass_after, mass_before);
}

TEST(TrainerConfig, PresetsCarryPublishedSettings) {
  const auto s1 = TrainerConfig::from_preset("squad1");
  EXPECT_EQ(s1.generator_lr, 1e-6);
  EXPECT_EQ(s1.retriever_lr, 1e-7);
  EXPECT_EQ(s1.batch_size, 12u);
  EXPECT_EQ(s1.clusters, 3u);
  EXPECT_EQ(s1.lambda, 0.5);
  EXPECT_EQ(s1.kl_beta, 0.1);
  EXPECT_EQ(s1.max_input_len, 128u);
  const auto s2 = TrainerConfig::from_preset("squad2");
  EXPECT_EQ(s2.batch_size, 8u);
  EXPECT_EQ(s2.max_input_len, 512u);
  const auto news = TrainerConfig::from_preset("newsqa");
  EXPECT_EQ(news.batch_size, 2u);
  EXPECT_EQ(news.clusters, 2u);
  EXPECT_EQ(news.lambda, 0.4);
  EXPECT_EQ(news.kl_beta, 0.05);
  EXPECT_EQ(news.max_input_len, 1250u);
  EXPECT_TRUE(throws_code([] { TrainerConfig::from_preset("imagenet"); }, ErrorCode::kInvalidArgument));
}

TEST(TrainerConfig, JsonOverlay) {
  auto c = TrainerConfig::from_preset("toy");
  c.apply_json({{"lambda", 0.05}, {"rl_epochs", 9}});
  EXPECT_EQ(c.lambda, 0.05);
  EXPECT_EQ(c.rl_epochs, 9u);
  TrainerConfig back;
  back.apply_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_TRUE(throws_code([&] { c.apply_json({{"lamda", 0.1}}); }, ErrorCode::kValidation));
  EXPECT_TRUE(throws_code([&] { c.apply_json({{"lambda", "high"}}); }, ErrorCode::kValidation));
}

TEST(TrainerConfig, ValidationRejectsBadValues) {
  auto c = TrainerConfig::from_preset("toy");
  c.kl_beta = -1.0;
  EXPECT_TRUE(throws_code([&] { c.validate(); }, ErrorCode::kValidation));
  c = TrainerConfig::from_preset("toy");
  c.generator_lr = 0.0;
  EXPECT_TRUE(throws_code([&] { c.validate(); }, ErrorCode::kValidation));
  c = TrainerConfig::from_preset("toy");
  c.rl_optimizer = "rmsprop";
  EXPECT_TRUE(throws_code([&] { c.validate(); }, ErrorCode::kValidation));
}

TEST(Optim, AdamFirstStepMovesByLearningRate) {
  Adam<double> adam(2);
  std::vector<double> p{1.0, -1.0}, g{0.5, -3.0};
  adam.step(p, g, 0.1);
  EXPECT_NEAR(p[0], 0.9, 1e-7);
  EXPECT_NEAR(p[1], -0.9, 1e-7);
}

TEST(Optim, ClipByGlobalNorm) {
  std::vector<double> a{3.0}, b{4.0};
  EXPECT_DOUBLE_EQ(clip_by_global_norm<double>({std::span<double>(a), std::span<double>(b)}, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(a[0], 0.6);
  EXPECT_DOUBLE_EQ(b[0], 0.8);
  EXPECT_DOUBLE_EQ(clip_by_global_norm<double>({std::span<double>(a), std::span<double>(b)}, 2.0), 1.0);
  EXPECT_DOUBLE_EQ(a[0], 0.6);
}

TEST(Optim, LinearScheduleWarmsUpThenDecays) {
  LinearSchedule s(10, 0.2);
  EXPECT_DOUBLE_EQ(s.factor(0), 0.5);
  EXPECT_DOUBLE_EQ(s.factor(1), 1.0);
  EXPECT_DOUBLE_EQ(s.factor(2), 1.0);
  EXPECT_DOUBLE_EQ(s.factor(6), 0.5);
  EXPECT_DOUBLE_EQ(s.factor(10), 0.0);
}

}  // namespace
}  // namespace rast
