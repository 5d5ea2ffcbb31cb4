#include "rast/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "rast/error.hpp"

namespace rast {

namespace {

using NgramCounts = std::map<Tokens, std::size_t>;

NgramCounts ngrams(const Tokens& t) {
  NgramCounts out;
  for (std::size_t n = 1; n <= 4; ++n)
    for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Tokens(t.begin() + i, t.begin() + i + n)];
  return out;
}

std::vector<Tokens> tokens_of(const std::vector<Question>& qs) {
  std::vector<Tokens> out;
  for (const auto& q : qs) out.push_back(q.tokens);
  return out;
}

std::string fixed(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(6) << v;
  return s.str();
}

}  // namespace

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (std::size_t n = 0; n < 4; ++n) {
    correct[n] += o.correct[n];
    total[n] += o.total[n];
  }
  hyp_len += o.hyp_len;
  ref_len += o.ref_len;
  return *this;
}

BleuStats bleu_stats(const Tokens& hyp, const std::vector<Tokens>& refs) {
  RAST_REQUIRE(!refs.empty(), ErrorCode::kInvalidArgument, "BLEU needs at least one reference");
  BleuStats s;
  s.hyp_len = hyp.size();
  std::size_t best_diff = 0;
  bool first = true;
  NgramCounts ref_max;
  for (const auto& r : refs) {
    const std::size_t diff = r.size() > hyp.size() ? r.size() - hyp.size() : hyp.size() - r.size();
    if (first || diff < best_diff || (diff == best_diff && r.size() < s.ref_len)) {
      best_diff = diff;
      s.ref_len = r.size();
      first = false;
    }
    for (const auto& [g, c] : ngrams(r)) ref_max[g] = std::max(ref_max[g], c);
  }
  for (const auto& [g, c] : ngrams(hyp)) {
    const std::size_t n = g.size() - 1;
    s.total[n] += c;
    if (auto it = ref_max.find(g); it != ref_max.end()) s.correct[n] += std::min(c, it->second);
  }
  return s;
}

double bleu_from_stats(const BleuStats& s, bool effective_order) {
  if (std::all_of(s.correct.begin(), s.correct.end(), [](std::size_t c) { return c == 0; })) return 0.0;
  double bp = 1.0;
  if (s.hyp_len < s.ref_len)
    bp = s.hyp_len > 0 ? std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len)) : 0.0;

  std::array<double, 4> prec{};
  double smooth = 1.0;
  std::size_t order = 4;
  for (std::size_t n = 0; n < 4; ++n) {
    if (s.total[n] == 0) break;
    if (effective_order) order = n + 1;
    if (s.correct[n] == 0) {
      smooth *= 2.0;
      prec[n] = 1.0 / (smooth * static_cast<double>(s.total[n]));
    } else {
      prec[n] = static_cast<double>(s.correct[n]) / static_cast<double>(s.total[n]);
    }
  }
  double log_sum = 0.0;
  for (std::size_t n = 0; n < order; ++n) {
    if (prec[n] == 0.0) return 0.0;
    log_sum += std::log(prec[n]);
  }
  // Fractions rather than percentages so that a perfect match is exactly 100.
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(order));
}

double sentence_bleu(const Tokens& hyp, const std::vector<Tokens>& refs) {
  return bleu_from_stats(bleu_stats(hyp, refs), true);
}

double corpus_bleu(const std::vector<Tokens>& hyps, const std::vector<std::vector<Tokens>>& refs) {
  RAST_REQUIRE(hyps.size() == refs.size(), ErrorCode::kInvalidArgument,
               "hypothesis and reference counts differ");
  BleuStats s;
  for (std::size_t i = 0; i < hyps.size(); ++i) s += bleu_stats(hyps[i], refs[i]);
  return bleu_from_stats(s, false);
}

double bleu4(const Question& hyp, const std::vector<Question>& refs) {
  RAST_REQUIRE(!hyp.empty(), ErrorCode::kInvalidArgument, "empty hypothesis");
  return sentence_bleu(hyp.tokens, tokens_of(refs));
}

double top1_bleu(const std::vector<TopNOutputs>& outputs) {
  std::vector<Tokens> hyps;
  std::vector<std::vector<Tokens>> refs;
  for (const auto& o : outputs) {
    RAST_REQUIRE(!o.hypotheses.empty(), ErrorCode::kValidation, "sample " + o.id + " has no outputs");
    hyps.push_back(o.hypotheses.front().tokens);
    refs.push_back(tokens_of(o.references));
  }
  return corpus_bleu(hyps, refs);
}

double oracle_bleu(const std::vector<TopNOutputs>& outputs) {
  std::vector<Tokens> hyps;
  std::vector<std::vector<Tokens>> refs;
  for (const auto& o : outputs) {
    RAST_REQUIRE(!o.hypotheses.empty(), ErrorCode::kValidation, "sample " + o.id + " has no outputs");
    auto r = tokens_of(o.references);
    std::size_t best = 0;
    double best_score = -1.0;
    for (std::size_t i = 0; i < o.hypotheses.size(); ++i) {
      const double b = sentence_bleu(o.hypotheses[i].tokens, r);
      if (b > best_score) {
        best_score = b;
        best = i;
      }
    }
    hyps.push_back(o.hypotheses[best].tokens);
    refs.push_back(std::move(r));
  }
  return corpus_bleu(hyps, refs);
}

std::optional<double> pairwise_bleu(const std::vector<TopNOutputs>& outputs) {
  double sum = 0.0;
  std::size_t counted = 0;
  for (const auto& o : outputs) {
    const auto& h = o.hypotheses;
    if (h.size() < 2) continue;
    double s = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i)
      for (std::size_t j = 0; j < h.size(); ++j)
        if (i != j) s += sentence_bleu(h[i].tokens, {h[j].tokens});
    sum += s / static_cast<double>(h.size() * (h.size() - 1));
    ++counted;
  }
  if (counted == 0) return std::nullopt;
  return sum / static_cast<double>(counted);
}

OverallBleu overall_bleu(double top1, double oracle, double pairwise) {
  if (pairwise == 0.0) return {0.0, true};
  return {top1 * oracle / pairwise, false};
}

Tokens normalize_answer(const std::string& s) {
  std::string clean;
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (std::ispunct(u)) continue;
    clean += static_cast<char>(std::tolower(u));
  }
  return tokenize(clean);
}

double exact_match(const std::string& prediction, const std::string& gold) {
  return normalize_answer(prediction) == normalize_answer(gold) ? 100.0 : 0.0;
}

double token_f1(const std::string& prediction, const std::string& gold) {
  const auto p = normalize_answer(prediction);
  const auto g = normalize_answer(gold);
  if (p.empty() || g.empty()) return p == g ? 100.0 : 0.0;
  std::map<std::string, std::size_t> gc;
  for (const auto& t : g) ++gc[t];
  std::size_t common = 0;
  for (const auto& t : p) {
    auto it = gc.find(t);
    if (it != gc.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(p.size());
  const double recall = static_cast<double>(common) / static_cast<double>(g.size());
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

EmF1 qa_em_f1(const std::vector<TopNOutputs>& outputs, const QaBackend& qa) {
  EmF1 out;
  if (outputs.empty()) return out;
  for (const auto& o : outputs) {
    double em = 0.0, f1 = 0.0;
    for (const auto& h : o.hypotheses) {
      const auto pred = qa.predict(o.input.context, h);
      if (!pred.answer) continue;
      const auto text = join(*pred.answer);
      em += exact_match(text, o.input.answer);
      f1 += token_f1(text, o.input.answer);
    }
    const double n = static_cast<double>(std::max<std::size_t>(o.hypotheses.size(), 1));
    out.em += em / n;
    out.f1 += f1 / n;
  }
  out.em /= static_cast<double>(outputs.size());
  out.f1 /= static_cast<double>(outputs.size());
  return out;
}

MetricReport evaluate_outputs(const std::vector<TopNOutputs>& outputs, const QaBackend* qa) {
  RAST_REQUIRE(!outputs.empty(), ErrorCode::kValidation, "no outputs to evaluate");
  MetricReport r;
  r.samples = outputs.size();
  r.outputs_per_sample = outputs.front().hypotheses.size();
  r.top1 = top1_bleu(outputs);
  r.oracle = oracle_bleu(outputs);
  r.pairwise = pairwise_bleu(outputs);
  if (r.pairwise) {
    const auto o = overall_bleu(r.top1, r.oracle, *r.pairwise);
    r.perfect_diversity = o.perfect_diversity;
    if (!o.perfect_diversity) r.overall = o.value;
  }
  if (qa) {
    const auto q = qa_em_f1(outputs, *qa);
    r.em = q.em;
    r.f1 = q.f1;
  }
  return r;
}

std::string MetricReport::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? fixed(*v) : std::string("null"); };
  std::ostringstream s;
  s << "{\"samples\": " << samples << ", \"outputs_per_sample\": " << outputs_per_sample
    << ", \"top1_bleu\": " << fixed(top1) << ", \"oracle_bleu\": " << fixed(oracle)
    << ", \"pairwise_bleu\": " << opt(pairwise) << ", \"overall_bleu\": " << opt(overall)
    << ", \"perfect_diversity\": " << (perfect_diversity ? "true" : "false") << ", \"em\": " << opt(em)
    << ", \"f1\": " << opt(f1) << "}";
  return s.str();
}

std::string MetricReport::table() const {
  auto opt = [](const std::optional<double>& v, const char* none) {
    if (!v) return std::string(none);
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << *v;
    return s.str();
  };
  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "samples        " << samples << " x " << outputs_per_sample << "\n";
  s << "Top-1 BLEU     " << top1 << "\n";
  s << "Oracle BLEU    " << oracle << "\n";
  s << "Pairwise BLEU  " << opt(pairwise, "n/a (N<2)") << "\n";
  s << "Overall BLEU   " << (perfect_diversity ? std::string("inf (perfect diversity)") : opt(overall, "n/a"))
    << "\n";
  s << "QA EM          " << opt(em, "n/a") << "\n";
  s << "QA F1          " << opt(f1, "n/a") << "\n";
  return s.str();
}

}  // namespace rast
