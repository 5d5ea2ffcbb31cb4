#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "rast/dataset.hpp"
#include "rast/text.hpp"

namespace rast {

/// A question with its context-sensitive content replaced by "[MASK]".
/// Invariants: non-empty, at least one non-mask token, no two adjacent masks.
struct Template {
  Tokens tokens;
  std::string source_id;

  /// Collapses runs of adjacent masks, then validates. Throws AllMasked when
  /// nothing but masks remain (or nothing at all).
  static Template from_tokens(Tokens tokens, std::string source_id = {});
  static Template parse(std::string_view text, std::string source_id = {});

  std::string text() const { return join(tokens); }
  TokenSet token_set() const { return rast::token_set(tokens); }
  /// Token set with "[MASK]" removed.
  TokenSet unmasked_set() const;
  std::size_t mask_count() const;

  friend bool operator==(const Template& a, const Template& b) { return a.tokens == b.tokens; }
};

struct TemplateCorpus {
  std::vector<Template> templates;
  double dedup_threshold = 0.8;

  std::size_t size() const { return templates.size(); }
  bool empty() const { return templates.empty(); }
};

enum class SpanKind { kEntity, kNounPhrase };

struct TaggerSpan {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  SpanKind kind = SpanKind::kEntity;
};

/// Marks entity and noun-phrase spans in a token sequence.
class Tagger {
 public:
  virtual ~Tagger() = default;
  virtual std::vector<TaggerSpan> tag(const Tokens& tokens) const = 0;
};

/// Capitalized-token runs are entities; a determiner followed by a run of
/// content words is a noun phrase. Stopwords and interrogatives never start
/// an entity, so a sentence-initial "What" is left alone.
class RuleTagger : public Tagger {
 public:
  explicit RuleTagger(const WordLists& words = WordLists::builtin()) : words_(&words) {}
  std::vector<TaggerSpan> tag(const Tokens& tokens) const override;

 private:
  const WordLists* words_;
};

/// Masks a question into a style template.
///
/// Tokens inside a tagger span are masked unless they are interrogative words.
/// Outside spans, stopwords and interrogatives are kept and any other token
/// that also occurs in the context (case-insensitive) is masked. Adjacent
/// masks collapse into one. Throws AllMasked when only masks would remain.
Template extract_template(const Question& question, const TokenSet& context_tokens,
                          const std::vector<TaggerSpan>& spans,
                          const WordLists& words = WordLists::builtin());

/// |a ∩ b| / |a ∪ b|, and 1 when both are empty.
double jaccard(const TokenSet& a, const TokenSet& b);
double jaccard(const Template& a, const Template& b);

/// Greedy first-seen-wins near-duplicate removal: a template survives iff its
/// Jaccard similarity to every previously kept template is <= threshold.
TemplateCorpus deduplicate(const std::vector<Template>& templates, double threshold);

struct CorpusBuildResult {
  TemplateCorpus corpus;
  std::size_t skipped = 0;  // samples whose template would be all masks
};

CorpusBuildResult build_corpus(const std::vector<Sample>& dataset, const Tagger& tagger,
                               double threshold, const WordLists& words = WordLists::builtin());

/// Template for one sample: tag, then mask against its own context.
Template template_for(const Question& question, const ContextAnswer& input, const Tagger& tagger,
                      const WordLists& words = WordLists::builtin());

/// JSONL of {template, source_id}.
void write_corpus(const std::filesystem::path& path, const TemplateCorpus& corpus);
TemplateCorpus read_corpus(const std::filesystem::path& path, double dedup_threshold = 0.8);

}  // namespace rast
