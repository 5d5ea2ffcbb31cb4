#include "rast/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <utility>

#include <json.hpp>

#include "rast/error.hpp"

namespace rast {

using nlohmann::json;

Question Question::from_string(std::string_view s) { return from_tokens(tokenize(s)); }

Question Question::from_tokens(Tokens tokens) {
  Question q;
  q.raw = join(tokens);
  q.tokens = std::move(tokens);
  return q;
}

Tokens ContextAnswer::answer_tokens() const {
  return Tokens(context.begin() + static_cast<std::ptrdiff_t>(answer_begin),
                context.begin() + static_cast<std::ptrdiff_t>(answer_end));
}

ContextAnswer make_context_answer(std::string context, std::string answer,
                                  std::size_t answer_start) {
  ContextAnswer x;
  x.context_raw = std::move(context);
  x.answer = std::move(answer);
  const auto& raw = x.context_raw;
  RAST_REQUIRE(!tokenize(x.answer).empty(), ErrorCode::kAnswerNotInContext, "empty answer");
  RAST_REQUIRE(answer_start + x.answer.size() <= raw.size() &&
                   raw.compare(answer_start, x.answer.size(), x.answer) == 0,
               ErrorCode::kAnswerNotInContext,
               "answer '" + x.answer + "' not found at offset " + std::to_string(answer_start));
  x.answer_char_begin = answer_start;
  x.answer_char_end = answer_start + x.answer.size();

  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t i = 0;
  while (i < raw.size()) {
    while (i < raw.size() && std::isspace(static_cast<unsigned char>(raw[i]))) ++i;
    if (i >= raw.size()) break;
    std::size_t j = i;
    while (j < raw.size() && !std::isspace(static_cast<unsigned char>(raw[j]))) ++j;
    spans.emplace_back(i, j);
    x.context.emplace_back(raw.substr(i, j - i));
    i = j;
  }
  // The answer must cover whole tokens: [answer_begin, answer_end) are the
  // tokens overlapping the character span.
  std::size_t first = spans.size(), last = 0;
  for (std::size_t t = 0; t < spans.size(); ++t) {
    auto [b, e] = spans[t];
    if (e <= x.answer_char_begin || b >= x.answer_char_end) continue;
    RAST_REQUIRE(b >= x.answer_char_begin && e <= x.answer_char_end,
                 ErrorCode::kAnswerNotInContext, "answer boundary falls inside a token");
    first = std::min(first, t);
    last = t + 1;
  }
  RAST_REQUIRE(first < last, ErrorCode::kAnswerNotInContext,
               "answer does not cover any context token");
  x.answer_begin = first;
  x.answer_end = last;
  return x;
}

namespace {

Sample parse_line(const std::string& line, std::size_t lineno) {
  auto fail = [&](const std::string& why) {
    return Error(ErrorCode::kValidation, "line " + std::to_string(lineno) + ": " + why);
  };
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw fail(std::string("malformed JSON: ") + e.what());
  }
  for (const char* key : {"context", "answer", "question"}) {
    if (!j.contains(key) || !j[key].is_string()) throw fail(std::string("missing string field ") + key);
  }
  if (!j.contains("answer_start") || !j["answer_start"].is_number_integer() ||
      j["answer_start"].get<long long>() < 0) {
    throw fail("missing non-negative integer field answer_start");
  }
  Sample s;
  s.id = j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>()
                                                 : std::to_string(lineno - 1);
  try {
    s.input = make_context_answer(j["context"].get<std::string>(), j["answer"].get<std::string>(),
                                  j["answer_start"].get<std::size_t>());
  } catch (const Error& e) {
    throw fail(e.what());
  }
  s.question = Question::from_string(j["question"].get<std::string>());
  if (s.question.empty()) throw fail("empty question");
  return s;
}

}  // namespace

std::vector<Sample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  RAST_REQUIRE(in.good(), ErrorCode::kIo, "cannot open dataset " + path.string());
  std::vector<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (tokenize(line).empty()) continue;
    out.push_back(parse_line(line, lineno));
  }
  return out;
}

std::string to_json_line(const Sample& sample) {
  json j;
  j["id"] = sample.id;
  j["context"] = sample.input.context_raw;
  j["answer"] = sample.input.answer;
  j["answer_start"] = sample.input.answer_char_begin;
  j["question"] = sample.question.raw;
  return j.dump();
}

void write_dataset(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::ofstream out(path, std::ios::binary);
  RAST_REQUIRE(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& s : samples) out << to_json_line(s) << '\n';
}

}  // namespace rast
