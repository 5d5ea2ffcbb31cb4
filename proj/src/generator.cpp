#include "rast/generator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "binary_io.hpp"
#include "rast/error.hpp"

namespace rast {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> log_softmax(const std::vector<double>& logits) {
  double m = kNegInf;
  for (double v : logits) m = std::max(m, v);
  RAST_REQUIRE(std::isfinite(m), ErrorCode::kInvalidArgument, "no token has finite logit");
  double z = 0.0;
  for (double v : logits)
    if (v != kNegInf) z += std::exp(v - m);
  const double lse = m + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    out[i] = logits[i] == kNegInf ? kNegInf : logits[i] - lse;
  return out;
}

TokenId argmax(const std::vector<double>& logp) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logp.size(); ++i)
    if (logp[i] > logp[best]) best = i;
  return static_cast<TokenId>(best);
}

GenerationOutput finish(const Vocabulary& vocab, GenerationOutput out) {
  Tokens toks;
  for (auto id : out.ids)
    if (id != vocab.end_id()) toks.push_back(vocab.token(id));
  out.question = Question::from_tokens(std::move(toks));
  out.total_log_prob = std::accumulate(out.token_log_probs.begin(), out.token_log_probs.end(), 0.0);
  return out;
}

}  // namespace

Tokens format_input_tokens(const ContextAnswer& x, const Tokens& style) {
  RAST_REQUIRE(x.answer_begin < x.answer_end && x.answer_end <= x.context.size(),
               ErrorCode::kAnswerNotInContext, "answer span outside context");
  Tokens out(style.begin(), style.end());
  out.emplace_back(kSeparatorToken);
  for (std::size_t i = 0; i < x.context.size(); ++i) {
    if (i == x.answer_begin) out.emplace_back(kHighlightToken);
    out.push_back(x.context[i]);
    if (i + 1 == x.answer_end) out.emplace_back(kHighlightToken);
  }
  return out;
}

ModelInput format_input(const Vocabulary& vocab, const ContextAnswer& x, const Tokens& style,
                        std::size_t max_input_len) {
  auto toks = format_input_tokens(x, style);
  RAST_REQUIRE(toks.size() <= max_input_len, ErrorCode::kInputTooLong,
               "formatted input has " + std::to_string(toks.size()) + " tokens, limit " +
                   std::to_string(max_input_len));
  return ModelInput{vocab.encode(toks)};
}

GenerationOutput generate_greedy(const SequenceModel& model, const ModelInput& input,
                                 std::size_t max_len) {
  GenerationOutput out;
  const auto end = model.vocab().end_id();
  while (out.ids.size() < max_len) {
    auto logp = model.next_log_probs(input, out.ids);
    const TokenId next = argmax(logp);
    out.ids.push_back(next);
    out.token_log_probs.push_back(logp[static_cast<std::size_t>(next)]);
    if (next == end) break;
  }
  return finish(model.vocab(), std::move(out));
}

GenerationOutput generate_greedy(const SequenceModel& model, const ContextAnswer& x,
                                 const Tokens& style, const DecodeOptions& opts) {
  return generate_greedy(model, format_input(model.vocab(), x, style, opts.max_input_len),
                         opts.max_len);
}

GenerationOutput sample_nucleus(const SequenceModel& model, const ModelInput& input, double p,
                                std::size_t top_k, std::mt19937_64& rng, std::size_t max_len) {
  RAST_REQUIRE(p > 0.0 && p <= 1.0, ErrorCode::kInvalidArgument, "nucleus p must lie in (0, 1]");
  RAST_REQUIRE(top_k >= 1, ErrorCode::kInvalidArgument, "top_k must be positive");
  GenerationOutput out;
  const auto end = model.vocab().end_id();
  std::vector<std::pair<double, TokenId>> ranked;
  while (out.ids.size() < max_len) {
    auto logp = model.next_log_probs(input, out.ids);
    ranked.clear();
    for (std::size_t i = 0; i < logp.size(); ++i)
      if (logp[i] != kNegInf) ranked.emplace_back(std::exp(logp[i]), static_cast<TokenId>(i));
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.first > b.first || (a.first == b.first && a.second < b.second);
    });
    std::size_t keep = 0;
    double mass = 0.0;
    while (keep < ranked.size() && keep < top_k) {
      mass += ranked[keep].first;
      ++keep;
      if (mass >= p) break;
    }
    double u = std::uniform_real_distribution<double>(0.0, mass)(rng);
    TokenId next = ranked[keep - 1].second;
    for (std::size_t i = 0; i < keep; ++i) {
      if (u < ranked[i].first) {
        next = ranked[i].second;
        break;
      }
      u -= ranked[i].first;
    }
    out.ids.push_back(next);
    out.token_log_probs.push_back(logp[static_cast<std::size_t>(next)]);
    if (next == end) break;
  }
  return finish(model.vocab(), std::move(out));
}

GenerationOutput sample_nucleus(const SequenceModel& model, const ContextAnswer& x,
                                const Tokens& style, double p, std::size_t top_k,
                                std::mt19937_64& rng, const DecodeOptions& opts) {
  return sample_nucleus(model, format_input(model.vocab(), x, style, opts.max_input_len), p, top_k,
                        rng, opts.max_len);
}

std::vector<TokenId> target_ids(const Vocabulary& vocab, const Question& y) {
  auto ids = vocab.encode(y.tokens);
  ids.push_back(vocab.end_id());
  return ids;
}

double sequence_log_prob(const SequenceModel& model, const ModelInput& input,
                         std::span<const TokenId> ids) {
  double total = 0.0;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    auto logp = model.next_log_probs(input, ids.first(t));
    total += logp[static_cast<std::size_t>(ids[t])];
  }
  return total;
}

double sequence_log_prob(const SequenceModel& model, const ContextAnswer& x, const Tokens& style,
                         const Question& y, const DecodeOptions& opts) {
  RAST_REQUIRE(!y.empty(), ErrorCode::kInvalidArgument, "empty question");
  const auto input = format_input(model.vocab(), x, style, opts.max_input_len);
  const auto ids = target_ids(model.vocab(), y);
  return sequence_log_prob(model, input, ids);
}

void accumulate_sequence_grad(const SequenceModel& model, const ModelInput& input,
                              std::span<const TokenId> ids, double scale, std::span<double> grad) {
  std::vector<double> d_logits;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const auto prefix = ids.first(t);
    auto logp = model.next_log_probs(input, prefix);
    // ∂ log p(y_t) / ∂ logit_v = 1[v = y_t] - p(v)
    d_logits.assign(logp.size(), 0.0);
    for (std::size_t v = 0; v < logp.size(); ++v)
      if (logp[v] != kNegInf) d_logits[v] = -scale * std::exp(logp[v]);
    d_logits[static_cast<std::size_t>(ids[t])] += scale;
    model.backprop_logits(input, prefix, d_logits, grad);
  }
}

Question vanilla_generate(const SequenceModel& vanilla, const ContextAnswer& x,
                          const DecodeOptions& opts) {
  return generate_greedy(vanilla, x, Tokens{}, opts).question;
}

// ---------------------------------------------------------------------------
// TabularModel

TabularModel::TabularModel(std::shared_ptr<const Vocabulary> vocab, const Tokens& alphabet,
                           std::size_t depth)
    : vocab_(std::move(vocab)), digit_(vocab_->size(), -1), depth_(depth) {
  for (const auto& tok : alphabet) {
    RAST_REQUIRE(vocab_->contains(tok), ErrorCode::kInvalidArgument, "alphabet token not in vocabulary: " + tok);
    const TokenId id = vocab_->id(tok);
    if (digit_[static_cast<std::size_t>(id)] >= 0) continue;
    digit_[static_cast<std::size_t>(id)] = static_cast<int>(alphabet_.size());
    alphabet_.push_back(id);
  }
  if (digit_[static_cast<std::size_t>(vocab_->end_id())] < 0) {
    digit_[static_cast<std::size_t>(vocab_->end_id())] = static_cast<int>(alphabet_.size());
    alphabet_.push_back(vocab_->end_id());
  }
  params_.assign(num_states() * alphabet_.size(), 0.0);
}

std::size_t TabularModel::num_states() const {
  std::size_t total = 0, power = 1;
  for (std::size_t l = 0; l <= depth_; ++l) {
    total += power;
    power *= alphabet_.size();
  }
  return total;
}

std::size_t TabularModel::state_of(std::span<const TokenId> prefix) const {
  const std::size_t len = std::min(prefix.size(), depth_);
  const auto tail = prefix.last(len);
  std::size_t offset = 0, power = 1;
  for (std::size_t l = 0; l < len; ++l) {
    offset += power;
    power *= alphabet_.size();
  }
  std::size_t code = 0;
  for (auto id : tail) {
    RAST_REQUIRE(id >= 0 && static_cast<std::size_t>(id) < digit_.size() &&
                     digit_[static_cast<std::size_t>(id)] >= 0,
                 ErrorCode::kInvalidArgument, "prefix token outside the tabular alphabet");
    code = code * alphabet_.size() + static_cast<std::size_t>(digit_[static_cast<std::size_t>(id)]);
  }
  return offset + code;
}

void TabularModel::set_logits(std::span<const TokenId> prefix, const std::vector<double>& logits) {
  RAST_REQUIRE(logits.size() == alphabet_.size(), ErrorCode::kDimensionMismatch,
               "one logit per alphabet token expected");
  std::copy(logits.begin(), logits.end(), params_.begin() + static_cast<std::ptrdiff_t>(state_of(prefix) * alphabet_.size()));
}

std::vector<double> TabularModel::next_log_probs(const ModelInput&,
                                                 std::span<const TokenId> prefix) const {
  const std::size_t row = state_of(prefix) * alphabet_.size();
  std::vector<double> logits(vocab_->size(), kNegInf);
  for (std::size_t a = 0; a < alphabet_.size(); ++a)
    logits[static_cast<std::size_t>(alphabet_[a])] = params_[row + a];
  return log_softmax(logits);
}

void TabularModel::backprop_logits(const ModelInput&, std::span<const TokenId> prefix,
                                   std::span<const double> d_logits, std::span<double> grad) const {
  const std::size_t row = state_of(prefix) * alphabet_.size();
  for (std::size_t a = 0; a < alphabet_.size(); ++a) {
    // Rows with -inf logits stay frozen.
    if (std::isinf(params_[row + a])) continue;
    grad[row + a] += d_logits[static_cast<std::size_t>(alphabet_[a])];
  }
}

std::unique_ptr<SequenceModel> SequenceModel::with_vocabulary(std::shared_ptr<const Vocabulary>) const {
  throw Error(ErrorCode::kInvalidArgument, backend_name() + " backend cannot extend its vocabulary");
}

std::unique_ptr<SequenceModel> TabularModel::clone() const {
  return std::make_unique<TabularModel>(*this);
}

void TabularModel::save(const std::filesystem::path& dir, const std::string& name) const {
  std::filesystem::create_directories(dir);
  nlohmann::json m;
  m["backend"] = backend_name();
  m["vocabulary"] = vocab_->tokens();
  m["vocabulary_hash"] = vocab_->fingerprint();
  Tokens alphabet;
  for (auto id : alphabet_) alphabet.push_back(vocab_->token(id));
  m["config"] = {{"alphabet", alphabet}, {"depth", depth_}};
  std::ofstream(dir / (name + ".json")) << m.dump(2) << '\n';
  detail::write_binary(dir / (name + ".bin"), params_.data(), params_.size());
}

}  // namespace rast
