#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace rast {

inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kHighlightToken = "<HL>";
inline constexpr std::string_view kSeparatorToken = "<sep>";
inline constexpr std::string_view kEndToken = "</s>";
inline constexpr std::string_view kUnknownToken = "<unk>";

using Tokens = std::vector<std::string>;
using TokenSet = std::unordered_set<std::string>;
using TokenId = std::int32_t;

/// Whitespace tokenizer. join(tokenize(s)) == s whenever s is already
/// single-space separated with no leading or trailing blanks.
Tokens tokenize(std::string_view text);
std::string join(const Tokens& tokens, std::string_view sep = " ");

std::string to_lower(std::string_view s);

TokenSet token_set(const Tokens& tokens);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Stopword and interrogative lists. Membership tests are case-insensitive.
class WordLists {
 public:
  WordLists() = default;
  WordLists(TokenSet stopwords, TokenSet interrogatives);

  /// Loads stopwords.txt and interrogatives.txt (one token per line) from dir.
  static WordLists load(const std::filesystem::path& dir);
  /// The lists shipped under data/, located via RAST_DATA_DIR or the build tree.
  static const WordLists& builtin();

  bool is_stopword(std::string_view token) const;
  bool is_interrogative(std::string_view token) const;
  bool is_kept(std::string_view token) const {
    return is_stopword(token) || is_interrogative(token);
  }

 private:
  TokenSet stopwords_;
  TokenSet interrogatives_;
};

/// Token <-> id table. Special tokens always occupy the first ids.
class Vocabulary {
 public:
  Vocabulary();
  /// Rebuilds a table saved via tokens(); the special-token prefix must match.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  TokenId add(std::string_view token);
  TokenId id(std::string_view token) const;  // unknown -> unk_id()
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }

  std::vector<TokenId> encode(const Tokens& tokens) const;
  Tokens decode(const std::vector<TokenId>& ids) const;

  TokenId mask_id() const { return mask_; }
  TokenId hl_id() const { return hl_; }
  TokenId sep_id() const { return sep_; }
  TokenId end_id() const { return end_; }
  TokenId unk_id() const { return unk_; }

  /// Order-sensitive hash of the token table, recorded in checkpoint manifests.
  std::uint64_t fingerprint() const;

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId mask_, hl_, sep_, end_, unk_;
};

}  // namespace rast
