#include "rast/text.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>

#include "rast/error.hpp"

namespace rast {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kAllMasked: return "AllMasked";
    case ErrorCode::kEmptyResult: return "EmptyResult";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kKTooLarge: return "KTooLarge";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
    case ErrorCode::kAnswerNotInContext: return "AnswerNotInContext";
    case ErrorCode::kInputTooLong: return "InputTooLong";
    case ErrorCode::kEmptyPool: return "EmptyPool";
    case ErrorCode::kStaleIndex: return "StaleIndex";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kValidation: return "ValidationError";
    case ErrorCode::kStageDependency: return "StageDependencyError";
    case ErrorCode::kIo: return "IoError";
  }
  return "Unknown";
}

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join(const Tokens& tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

TokenSet token_set(const Tokens& tokens) { return TokenSet(tokens.begin(), tokens.end()); }

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

TokenSet read_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  RAST_REQUIRE(in.good(), ErrorCode::kIo, "cannot open word list " + path.string());
  TokenSet out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) out.insert(to_lower(line));
  }
  return out;
}

}  // namespace

WordLists::WordLists(TokenSet stopwords, TokenSet interrogatives) {
  for (const auto& w : stopwords) stopwords_.insert(to_lower(w));
  for (const auto& w : interrogatives) interrogatives_.insert(to_lower(w));
}

WordLists WordLists::load(const std::filesystem::path& dir) {
  return WordLists(read_list(dir / "stopwords.txt"), read_list(dir / "interrogatives.txt"));
}

const WordLists& WordLists::builtin() {
  static const WordLists lists = [] {
    if (const char* env = std::getenv("RAST_WORDLIST_DIR"); env && *env) return load(env);
    return load(RAST_DEFAULT_DATA_DIR);
  }();
  return lists;
}

bool WordLists::is_stopword(std::string_view token) const {
  return stopwords_.count(to_lower(token)) > 0;
}

bool WordLists::is_interrogative(std::string_view token) const {
  return interrogatives_.count(to_lower(token)) > 0;
}

Vocabulary::Vocabulary() {
  unk_ = add(kUnknownToken);
  end_ = add(kEndToken);
  sep_ = add(kSeparatorToken);
  hl_ = add(kHighlightToken);
  mask_ = add(kMaskToken);
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i < v.size()) {
      RAST_REQUIRE(tokens[i] == v.tokens_[i], ErrorCode::kValidation,
                   "vocabulary does not start with the special tokens");
      continue;
    }
    RAST_REQUIRE(!v.contains(tokens[i]), ErrorCode::kValidation, "duplicate vocabulary entry " + tokens[i]);
    v.add(tokens[i]);
  }
  return v;
}

TokenId Vocabulary::add(std::string_view token) {
  auto it = index_.find(std::string(token));
  if (it != index_.end()) return it->second;
  auto id = static_cast<TokenId>(tokens_.size());
  tokens_.emplace_back(token);
  index_.emplace(tokens_.back(), id);
  return id;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? unk_ : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) > 0;
}

const std::string& Vocabulary::token(TokenId id) const {
  RAST_REQUIRE(id >= 0 && static_cast<std::size_t>(id) < tokens_.size(),
               ErrorCode::kInvalidArgument, "token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode(const Tokens& tokens) const {
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

Tokens Vocabulary::decode(const std::vector<TokenId>& ids) const {
  Tokens out;
  out.reserve(ids.size());
  for (auto i : ids) out.push_back(token(i));
  return out;
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens_) {
    h = fnv1a(t, h);
    h = fnv1a("\n", h);
  }
  return h;
}

}  // namespace rast
