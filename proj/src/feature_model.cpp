#include "rast/feature_model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "binary_io.hpp"
#include "rast/error.hpp"

namespace rast {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Keys live above any vocabulary id.
constexpr std::uint64_t kBosKey = 1ULL << 40;
constexpr std::uint64_t kCapKey = kBosKey + 1;
constexpr std::uint64_t kNumKey = kBosKey + 2;
constexpr std::uint64_t kTemplateEndKey = kBosKey + 3;
constexpr std::uint64_t kEntityRoleKey = kBosKey + 16;  // + 2 * role + numeric

constexpr int kRoleAnswer = 0;
constexpr int kRoleOther = 4;

enum Tag : std::uint64_t {
  kUnigram = 1,
  kBigram,
  kTrigram,
  kAnswerBigram,
  kAnswerUnigram,
  kRepeat,
  kTemplateMatch,
  kTemplateMatchAnswer,
  kMaskFill,
  kTemplateSkip,
  kTemplateContains,
  kNoTemplateBigram,
};

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  h *= 0xff51afd7ed558ccdULL;
  return h ^ (h >> 33);
}

std::uint64_t hash_of(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x12345678ULL;
  for (auto p : parts) h = mix(h, p);
  return h;
}

}  // namespace

struct FeatureModel::InputView {
  std::vector<TokenId> style;
  std::vector<TokenId> context;
  std::vector<std::pair<TokenId, int>> roles;  // entity id -> role
  std::uint64_t answer_signature = 0;
  bool has_style = false;

  int role_of(TokenId id) const {
    for (const auto& [e, r] : roles)
      if (e == id) return r;
    return kRoleOther;
  }
};

struct FeatureModel::StepState {
  std::uint64_t prev1 = kBosKey;
  std::uint64_t prev2 = kBosKey;
  std::size_t pointer = 0;  // position in the style template
  std::vector<TokenId> emitted;
};

FeatureModel::FeatureModel(std::shared_ptr<const Vocabulary> vocab, std::vector<TokenId> output_words,
                           unsigned hash_bits)
    : vocab_(std::move(vocab)),
      output_words_(std::move(output_words)),
      hash_bits_(hash_bits),
      weights_(std::size_t{1} << hash_bits, 0.0) {
  RAST_REQUIRE(hash_bits >= 8 && hash_bits <= 26, ErrorCode::kInvalidArgument, "hash_bits out of range");
  const auto n = vocab_->size();
  entity_.assign(n, false);
  numeric_.assign(n, false);
  output_word_.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& tok = vocab_->token(static_cast<TokenId>(i));
    if (tok.empty() || tok == kMaskToken || tok == kUnknownToken) continue;
    const auto c = static_cast<unsigned char>(tok[0]);
    entity_[i] = std::isupper(c) || std::isdigit(c);
    numeric_[i] = std::isdigit(c);
  }
  std::sort(output_words_.begin(), output_words_.end());
  output_words_.erase(std::unique(output_words_.begin(), output_words_.end()), output_words_.end());
  for (auto id : output_words_) output_word_[static_cast<std::size_t>(id)] = true;
  output_word_[static_cast<std::size_t>(vocab_->end_id())] = true;
}

std::unique_ptr<FeatureModel> FeatureModel::for_questions(std::shared_ptr<const Vocabulary> vocab,
                                                          const std::vector<Question>& questions,
                                                          unsigned hash_bits) {
  std::vector<TokenId> words;
  FeatureModel probe(vocab, {}, 8);
  for (const auto& q : questions)
    for (const auto& tok : q.tokens) {
      const TokenId id = vocab->id(tok);
      if (id != vocab->unk_id() && !probe.is_entity(id)) words.push_back(id);
    }
  return std::make_unique<FeatureModel>(std::move(vocab), std::move(words), hash_bits);
}

FeatureModel::InputView FeatureModel::parse(const ModelInput& input) const {
  InputView view;
  const auto& toks = input.tokens;
  const auto sep = std::find(toks.begin(), toks.end(), vocab_->sep_id());
  RAST_REQUIRE(sep != toks.end(), ErrorCode::kInvalidArgument, "model input lacks <sep>");
  view.style.assign(toks.begin(), sep);
  view.has_style = !view.style.empty();

  std::size_t answer_begin = 0, answer_end = 0;
  int highlights = 0;
  for (auto it = sep + 1; it != toks.end(); ++it) {
    if (*it == vocab_->hl_id()) {
      (highlights++ == 0 ? answer_begin : answer_end) = view.context.size();
      continue;
    }
    view.context.push_back(*it);
  }
  RAST_REQUIRE(highlights == 2 && answer_begin < answer_end, ErrorCode::kAnswerNotInContext,
               "model input must highlight exactly one answer span");

  // Sentence around the answer, delimited by "." tokens.
  const TokenId period = vocab_->id(".");
  std::size_t sb = answer_begin, se = answer_end;
  while (sb > 0 && view.context[sb - 1] != period) --sb;
  while (se < view.context.size() && view.context[se] != period) ++se;

  // Sentence entities get roles by order of appearance (1..3); the answer
  // signature hashes the sentence's non-entity words and the answer's rank.
  std::uint64_t sig = 0xabcdefULL;
  int entity_rank = 0, answer_rank = 0, order = 0;
  for (std::size_t i = sb; i < se; ++i) {
    const TokenId id = view.context[i];
    const bool in_answer = i >= answer_begin && i < answer_end;
    if (in_answer) {
      if (i == answer_begin) answer_rank = entity_rank++;
      view.roles.emplace_back(id, kRoleAnswer);
    } else if (entity_[static_cast<std::size_t>(id)]) {
      ++entity_rank;
      view.roles.emplace_back(id, std::min(++order, 3));
    } else {
      sig = mix(sig, static_cast<std::uint64_t>(id));
    }
  }
  view.answer_signature = mix(sig, static_cast<std::uint64_t>(answer_rank));
  return view;
}

FeatureModel::StepState FeatureModel::advance(const InputView& view,
                                              std::span<const TokenId> prefix) const {
  StepState s;
  const auto& style = view.style;
  auto matches = [&](TokenId y, std::size_t pos) {
    if (pos >= style.size()) return false;
    return style[pos] == y || (style[pos] == vocab_->mask_id() && entity_[static_cast<std::size_t>(y)]);
  };
  for (auto y : prefix) {
    if (view.has_style) {
      if (matches(y, s.pointer)) {
        ++s.pointer;
      } else if (matches(y, s.pointer + 1)) {
        s.pointer += 2;
      }
    }
    s.prev2 = s.prev1;
    const auto yi = static_cast<std::size_t>(y);
    s.prev1 = entity_[yi] ? kEntityRoleKey + 2 * static_cast<std::uint64_t>(view.role_of(y)) + numeric_[yi]
                          : static_cast<std::uint64_t>(y);
    s.emitted.push_back(y);
  }
  return s;
}

std::vector<TokenId> FeatureModel::candidates(const InputView& view) const {
  std::vector<TokenId> out = output_words_;
  out.push_back(vocab_->end_id());
  for (auto id : view.context)
    if (id != vocab_->unk_id()) out.push_back(id);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void FeatureModel::features(const InputView& view, const StepState& s, TokenId v,
                            std::vector<std::uint32_t>& out) const {
  out.clear();
  const auto vi = static_cast<std::size_t>(v);
  const std::uint64_t key =
      entity_[vi] ? kEntityRoleKey + 2 * static_cast<std::uint64_t>(view.role_of(v)) + numeric_[vi]
                  : static_cast<std::uint64_t>(v);
  const std::uint64_t mask = (std::uint64_t{1} << hash_bits_) - 1;
  auto emit = [&](std::initializer_list<std::uint64_t> parts) {
    out.push_back(static_cast<std::uint32_t>(hash_of(parts) & mask));
  };
  const std::uint64_t sig = view.answer_signature;

  emit({kUnigram, key});
  emit({kBigram, s.prev1, key});
  emit({kTrigram, s.prev2, s.prev1, key});
  emit({kAnswerBigram, sig, s.prev1, key});
  emit({kAnswerUnigram, sig, key});
  if (v != vocab_->end_id() && std::find(s.emitted.begin(), s.emitted.end(), v) != s.emitted.end())
    emit({kRepeat, key});

  if (!view.has_style) {
    emit({kNoTemplateBigram, s.prev1, key});
    return;
  }
  const auto& style = view.style;
  auto style_key = [&](std::size_t pos) -> std::uint64_t {
    if (pos >= style.size()) return kTemplateEndKey;
    const auto id = static_cast<std::size_t>(style[pos]);
    if (style[pos] == vocab_->mask_id()) return static_cast<std::uint64_t>(style[pos]);
    return entity_[id] ? (numeric_[id] ? kNumKey : kCapKey) : static_cast<std::uint64_t>(style[pos]);
  };
  auto matches = [&](std::size_t pos) {
    if (pos >= style.size()) return pos == style.size() && v == vocab_->end_id();
    return style[pos] == v || (style[pos] == vocab_->mask_id() && entity_[vi]);
  };
  if (matches(s.pointer)) {
    emit({kTemplateMatch, style_key(s.pointer)});
    emit({kTemplateMatchAnswer, sig, style_key(s.pointer)});
    if (s.pointer < style.size() && style[s.pointer] == vocab_->mask_id()) emit({kMaskFill, s.prev1, key});
  } else if (s.pointer + 1 <= style.size() && matches(s.pointer + 1)) {
    emit({kTemplateSkip, style_key(s.pointer + 1)});
  }
  if (!entity_[vi] && v != vocab_->end_id() &&
      std::find(style.begin(), style.end(), v) != style.end() &&
      std::find(s.emitted.begin(), s.emitted.end(), v) == s.emitted.end())
    emit({kTemplateContains, key});
}

std::vector<double> FeatureModel::next_log_probs(const ModelInput& input,
                                                 std::span<const TokenId> prefix) const {
  const auto view = parse(input);
  const auto state = advance(view, prefix);
  std::vector<double> logits(vocab_->size(), kNegInf);
  std::vector<std::uint32_t> feats;
  double m = kNegInf;
  for (auto v : candidates(view)) {
    features(view, state, v, feats);
    double z = 0.0;
    for (auto f : feats) z += weights_[f];
    logits[static_cast<std::size_t>(v)] = z;
    m = std::max(m, z);
  }
  double total = 0.0;
  for (double l : logits)
    if (l != kNegInf) total += std::exp(l - m);
  const double lse = m + std::log(total);
  for (auto& l : logits)
    if (l != kNegInf) l -= lse;
  return logits;
}

void FeatureModel::backprop_logits(const ModelInput& input, std::span<const TokenId> prefix,
                                   std::span<const double> d_logits, std::span<double> grad) const {
  const auto view = parse(input);
  const auto state = advance(view, prefix);
  std::vector<std::uint32_t> feats;
  for (auto v : candidates(view)) {
    const double d = d_logits[static_cast<std::size_t>(v)];
    if (d == 0.0) continue;
    features(view, state, v, feats);
    for (auto f : feats) grad[f] += d;
  }
}

std::unique_ptr<SequenceModel> FeatureModel::clone() const {
  return std::make_unique<FeatureModel>(*this);
}

void FeatureModel::save(const std::filesystem::path& dir, const std::string& name) const {
  std::filesystem::create_directories(dir);
  nlohmann::json m;
  m["backend"] = backend_name();
  m["vocabulary"] = vocab_->tokens();
  m["vocabulary_hash"] = vocab_->fingerprint();
  Tokens words;
  for (auto id : output_words_) words.push_back(vocab_->token(id));
  m["config"] = {{"hash_bits", hash_bits_}, {"output_words", words}};
  std::ofstream out(dir / (name + ".json"));
  RAST_REQUIRE(out.good(), ErrorCode::kIo, "cannot write model manifest in " + dir.string());
  out << m.dump(2) << '\n';
  detail::write_binary(dir / (name + ".bin"), weights_.data(), weights_.size());
}

std::unique_ptr<SequenceModel> FeatureModel::with_vocabulary(std::shared_ptr<const Vocabulary> vocab) const {
  const auto& old = vocab_->tokens();
  RAST_REQUIRE(vocab->size() >= old.size() && std::equal(old.begin(), old.end(), vocab->tokens().begin()),
               ErrorCode::kInvalidArgument, "vocabulary does not extend the model's vocabulary");
  auto model = std::make_unique<FeatureModel>(std::move(vocab), output_words_, hash_bits_);
  model->weights_ = weights_;
  return model;
}

std::unique_ptr<FeatureModel> FeatureModel::load(const std::filesystem::path& dir,
                                                 const std::string& name) {
  std::ifstream in(dir / (name + ".json"));
  RAST_REQUIRE(in.good(), ErrorCode::kIo, "missing model manifest " + (dir / (name + ".json")).string());
  auto m = nlohmann::json::parse(in);
  RAST_REQUIRE(m.at("backend") == "feature-rnn", ErrorCode::kValidation, "not a feature-rnn checkpoint");
  auto vocab = std::make_shared<const Vocabulary>(
      Vocabulary::from_tokens(m.at("vocabulary").get<std::vector<std::string>>()));
  RAST_REQUIRE(vocab->fingerprint() == m.at("vocabulary_hash").get<std::uint64_t>(),
               ErrorCode::kValidation, "vocabulary hash mismatch");
  std::vector<TokenId> words;
  for (const auto& w : m.at("config").at("output_words").get<Tokens>()) words.push_back(vocab->id(w));
  const auto bits = m.at("config").at("hash_bits").get<unsigned>();
  auto model = std::make_unique<FeatureModel>(vocab, std::move(words), bits);
  model->weights_ = detail::read_binary<double>(dir / (name + ".bin"), std::size_t{1} << bits);
  return model;
}

std::unique_ptr<SequenceModel> load_model(const std::filesystem::path& dir, const std::string& name) {
  std::ifstream in(dir / (name + ".json"));
  RAST_REQUIRE(in.good(), ErrorCode::kIo, "missing model manifest " + (dir / (name + ".json")).string());
  auto m = nlohmann::json::parse(in);
  const auto backend = m.at("backend").get<std::string>();
  if (backend == "feature-rnn") return FeatureModel::load(dir, name);
  if (backend == "tabular") {
    auto vocab = std::make_shared<const Vocabulary>(
        Vocabulary::from_tokens(m.at("vocabulary").get<std::vector<std::string>>()));
    auto model = std::make_unique<TabularModel>(vocab, m.at("config").at("alphabet").get<Tokens>(),
                                                m.at("config").at("depth").get<std::size_t>());
    auto params = detail::read_binary<double>(dir / (name + ".bin"), model->parameters().size());
    std::copy(params.begin(), params.end(), model->parameters().begin());
    return model;
  }
  throw Error(ErrorCode::kValidation, "unknown generator backend " + backend);
}

}  // namespace rast
