#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rast/text.hpp"

namespace rast {

struct Question {
  Tokens tokens;
  std::string raw;

  /// Tokenizes s; raw is the normalized single-space form.
  static Question from_string(std::string_view s);
  static Question from_tokens(Tokens tokens);
  bool empty() const { return tokens.empty(); }
};

/// A passage plus an answer span inside it.
struct ContextAnswer {
  std::string context_raw;
  std::string answer;
  std::size_t answer_char_begin = 0;
  std::size_t answer_char_end = 0;
  Tokens context;
  // Token span of the answer in `context`, [answer_begin, answer_end).
  std::size_t answer_begin = 0;
  std::size_t answer_end = 0;

  Tokens answer_tokens() const;
};

/// Builds a ContextAnswer from raw strings and a character offset.
/// Throws AnswerNotInContext when the answer text is not found at that offset
/// or does not cover whole tokens.
ContextAnswer make_context_answer(std::string context, std::string answer,
                                  std::size_t answer_start);

struct Sample {
  std::string id;
  ContextAnswer input;
  Question question;
};

/// Reads a JSONL dataset with fields context, answer, answer_start, question
/// (and an optional id). Throws ValidationError naming the offending line.
std::vector<Sample> read_dataset(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path, const std::vector<Sample>& samples);
std::string to_json_line(const Sample& sample);

}  // namespace rast
