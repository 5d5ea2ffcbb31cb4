#include "rast/corpus.hpp"

#include <cctype>
#include <fstream>

#include <json.hpp>

#include "rast/error.hpp"

namespace rast {

Template Template::from_tokens(Tokens tokens, std::string source_id) {
  Template t;
  t.source_id = std::move(source_id);
  bool has_content = false;
  for (auto& tok : tokens) {
    const bool is_mask = tok == kMaskToken;
    if (is_mask && !t.tokens.empty() && t.tokens.back() == kMaskToken) continue;
    has_content = has_content || !is_mask;
    t.tokens.push_back(std::move(tok));
  }
  RAST_REQUIRE(has_content, ErrorCode::kAllMasked, "template contains only [MASK] tokens");
  return t;
}

Template Template::parse(std::string_view text, std::string source_id) {
  return from_tokens(tokenize(text), std::move(source_id));
}

TokenSet Template::unmasked_set() const {
  TokenSet out;
  for (const auto& tok : tokens)
    if (tok != kMaskToken) out.insert(tok);
  return out;
}

std::size_t Template::mask_count() const {
  std::size_t n = 0;
  for (const auto& tok : tokens) n += tok == kMaskToken;
  return n;
}

namespace {

bool is_capitalized(const std::string& tok) {
  return !tok.empty() && std::isupper(static_cast<unsigned char>(tok[0]));
}

bool is_determiner(const std::string& tok) {
  static const TokenSet dets{"a", "an", "the", "this", "that", "these", "those"};
  return dets.count(to_lower(tok)) > 0;
}

bool is_punct(const std::string& tok) {
  for (unsigned char c : tok)
    if (std::isalnum(c)) return false;
  return true;
}

}  // namespace

std::vector<TaggerSpan> RuleTagger::tag(const Tokens& tokens) const {
  std::vector<TaggerSpan> spans;
  const std::size_t n = tokens.size();
  std::size_t i = 0;
  while (i < n) {
    const auto& tok = tokens[i];
    if (is_capitalized(tok) && !words_->is_kept(tok)) {
      std::size_t j = i + 1;
      while (j < n && is_capitalized(tokens[j]) && !words_->is_kept(tokens[j])) ++j;
      spans.push_back({i, j, SpanKind::kEntity});
      i = j;
      continue;
    }
    if (is_determiner(tok)) {
      std::size_t j = i + 1;
      while (j < n && !words_->is_kept(tokens[j]) && !is_punct(tokens[j])) ++j;
      if (j > i + 1) {
        spans.push_back({i, j, SpanKind::kNounPhrase});
        i = j;
        continue;
      }
    }
    ++i;
  }
  return spans;
}

Template extract_template(const Question& question, const TokenSet& context_tokens,
                          const std::vector<TaggerSpan>& spans, const WordLists& words) {
  const std::size_t n = question.tokens.size();
  RAST_REQUIRE(n > 0, ErrorCode::kInvalidArgument, "empty question");
  std::vector<bool> in_span(n, false);
  for (const auto& s : spans) {
    RAST_REQUIRE(s.start < s.end && s.end <= n, ErrorCode::kInvalidArgument,
                 "tagger span out of bounds");
    for (std::size_t i = s.start; i < s.end; ++i) in_span[i] = true;
  }
  TokenSet context_lower;
  for (const auto& t : context_tokens) context_lower.insert(to_lower(t));

  Tokens out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& tok = question.tokens[i];
    bool mask;
    if (words.is_interrogative(tok)) {
      mask = false;
    } else if (in_span[i]) {
      mask = true;
    } else {
      mask = !words.is_stopword(tok) && context_lower.count(to_lower(tok)) > 0;
    }
    out.push_back(mask ? std::string(kMaskToken) : tok);
  }
  return Template::from_tokens(std::move(out));
}

double jaccard(const TokenSet& a, const TokenSet& b) {
  if (a.empty() && b.empty()) return 1.0;
  const TokenSet& small = a.size() <= b.size() ? a : b;
  const TokenSet& large = a.size() <= b.size() ? b : a;
  std::size_t common = 0;
  for (const auto& t : small) common += large.count(t);
  return static_cast<double>(common) / static_cast<double>(a.size() + b.size() - common);
}

double jaccard(const Template& a, const Template& b) { return jaccard(a.token_set(), b.token_set()); }

TemplateCorpus deduplicate(const std::vector<Template>& templates, double threshold) {
  RAST_REQUIRE(threshold > 0.0 && threshold <= 1.0, ErrorCode::kInvalidArgument,
               "dedup threshold must lie in (0, 1]");
  RAST_REQUIRE(!templates.empty(), ErrorCode::kEmptyResult, "no templates to deduplicate");
  TemplateCorpus corpus;
  corpus.dedup_threshold = threshold;
  std::vector<TokenSet> kept_sets;
  for (const auto& t : templates) {
    auto set = t.token_set();
    bool keep = true;
    for (const auto& k : kept_sets) {
      if (jaccard(set, k) > threshold) {
        keep = false;
        break;
      }
    }
    if (keep) {
      corpus.templates.push_back(t);
      kept_sets.push_back(std::move(set));
    }
  }
  return corpus;
}

Template template_for(const Question& question, const ContextAnswer& input, const Tagger& tagger,
                      const WordLists& words) {
  return extract_template(question, token_set(input.context), tagger.tag(question.tokens), words);
}

CorpusBuildResult build_corpus(const std::vector<Sample>& dataset, const Tagger& tagger,
                               double threshold, const WordLists& words) {
  RAST_REQUIRE(!dataset.empty(), ErrorCode::kEmptyResult, "empty dataset");
  std::vector<Template> templates;
  templates.reserve(dataset.size());
  CorpusBuildResult result;
  for (const auto& sample : dataset) {
    try {
      auto t = template_for(sample.question, sample.input, tagger, words);
      t.source_id = sample.id;
      templates.push_back(std::move(t));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kAllMasked) throw;
      ++result.skipped;
    }
  }
  RAST_REQUIRE(!templates.empty(), ErrorCode::kEmptyResult, "every sample produced an all-mask template");
  result.corpus = deduplicate(templates, threshold);
  return result;
}

void write_corpus(const std::filesystem::path& path, const TemplateCorpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  RAST_REQUIRE(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& t : corpus.templates) {
    nlohmann::json j;
    j["template"] = t.text();
    j["source_id"] = t.source_id;
    out << j.dump() << '\n';
  }
}

TemplateCorpus read_corpus(const std::filesystem::path& path, double dedup_threshold) {
  std::ifstream in(path);
  RAST_REQUIRE(in.good(), ErrorCode::kIo, "cannot open corpus " + path.string());
  TemplateCorpus corpus;
  corpus.dedup_threshold = dedup_threshold;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (tokenize(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      corpus.templates.push_back(Template::parse(j.at("template").get<std::string>(),
                                                 j.value("source_id", std::string{})));
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kValidation,
                  path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return corpus;
}

}  // namespace rast
