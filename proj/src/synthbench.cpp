#include "rast/synthbench.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <set>
#include <unordered_set>

#include "rast/error.hpp"

namespace rast::synth {

namespace {

std::string placeholder(Slot s) {
  switch (s) {
    case Slot::kPerson: return "{P}";
    case Slot::kOrg: return "{O}";
    case Slot::kYear: return "{Y}";
    case Slot::kPlace: return "{L}";
    case Slot::kBook: return "{B}";
  }
  return "{?}";
}

std::optional<Slot> slot_of(const std::string& tok) {
  for (Slot s : {Slot::kPerson, Slot::kOrg, Slot::kYear, Slot::kPlace, Slot::kBook})
    if (tok == placeholder(s)) return s;
  return std::nullopt;
}

bool entity_like(const std::string& tok) {
  if (tok.empty()) return false;
  const auto c = static_cast<unsigned char>(tok[0]);
  return std::isupper(c) || std::isdigit(c);
}

std::vector<std::string> make_names(std::mt19937_64& rng, std::size_t n,
                                    std::unordered_set<std::string>& used) {
  static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
  static const char* vowels[] = {"a", "e", "i", "o", "u"};
  std::vector<std::string> out;
  while (out.size() < n) {
    const int syllables = 2 + static_cast<int>(rng() % 2);
    std::string name;
    for (int i = 0; i < syllables; ++i) {
      name += onsets[rng() % std::size(onsets)];
      name += vowels[rng() % std::size(vowels)];
    }
    if (rng() % 2) name += onsets[rng() % std::size(onsets)];
    name[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
    if (used.insert(name).second) out.push_back(name);
  }
  return out;
}

}  // namespace

const std::string* Fact::value(Slot s) const {
  for (const auto& [slot, v] : values)
    if (slot == s) return &v;
  return nullptr;
}

SyntheticWorld::SyntheticWorld(std::uint64_t seed) : seed_(seed) {
  relations_ = {
      {"founded", tokenize("{P} founded {O} in {Y} ."), {Slot::kPerson, Slot::kOrg, Slot::kYear},
       {"found", "founded"}},
      {"based", tokenize("{O} is based in {L} ."), {Slot::kOrg, Slot::kPlace}, {"based"}},
      {"born", tokenize("{P} was born in {L} in {Y} ."), {Slot::kPerson, Slot::kPlace, Slot::kYear},
       {"born"}},
      {"wrote", tokenize("{P} wrote {B} in {Y} ."), {Slot::kPerson, Slot::kBook, Slot::kYear},
       {"write", "wrote", "written"}},
  };
  auto add = [&](std::size_t rel, Slot asked, std::initializer_list<const char*> patterns) {
    for (const char* p : patterns) styles_.push_back({rel, asked, tokenize(p)});
  };
  add(0, Slot::kYear, {"when did {P} found {O} ?", "in what year did {P} found {O} ?",
                       "what year was {O} founded by {P} ?", "in which year was {O} founded ?"});
  add(0, Slot::kPerson, {"who founded {O} ?", "who founded {O} in {Y} ?", "by whom was {O} founded ?",
                         "which person founded {O} ?"});
  add(0, Slot::kOrg, {"what did {P} found ?", "what did {P} found in {Y} ?",
                      "which company was founded by {P} ?", "what company did {P} found in {Y} ?"});
  add(1, Slot::kPlace, {"where is {O} based ?", "in which city is {O} based ?", "what city is {O} based in ?"});
  add(1, Slot::kOrg, {"which company is based in {L} ?", "what is based in {L} ?",
                      "what company is based in {L} ?"});
  add(2, Slot::kYear, {"when was {P} born ?", "in what year was {P} born ?", "what year was {P} born in {L} ?",
                       "in which year was {P} born ?"});
  add(2, Slot::kPlace, {"where was {P} born ?", "in which city was {P} born ?", "what city was {P} born in ?",
                        "where was {P} born in {Y} ?"});
  add(2, Slot::kPerson, {"who was born in {L} in {Y} ?", "which person was born in {L} in {Y} ?",
                         "who was born in {Y} in {L} ?"});
  add(3, Slot::kYear, {"when did {P} write {B} ?", "in what year did {P} write {B} ?",
                       "what year was {B} written ?", "in which year was {B} written by {P} ?"});
  add(3, Slot::kPerson, {"who wrote {B} ?", "by whom was {B} written ?", "which author wrote {B} ?"});
  add(3, Slot::kBook, {"what did {P} write in {Y} ?", "which book did {P} write in {Y} ?",
                       "what book was written by {P} in {Y} ?"});

  std::mt19937_64 rng(seed);
  std::unordered_set<std::string> used;
  persons_ = make_names(rng, 40, used);
  orgs_ = make_names(rng, 30, used);
  places_ = make_names(rng, 20, used);
  books_ = make_names(rng, 30, used);
  for (int y = 1800; y < 2000; ++y) years_.push_back(std::to_string(y));
}

std::vector<std::size_t> SyntheticWorld::styles_for(std::size_t relation, Slot asked) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < styles_.size(); ++i)
    if (styles_[i].relation == relation && styles_[i].asked == asked) out.push_back(i);
  return out;
}

Tokens SyntheticWorld::render_question(const QuestionStyle& style, const Fact& fact) const {
  Tokens out;
  for (const auto& tok : style.pattern) {
    if (auto s = slot_of(tok)) {
      const auto* v = fact.value(*s);
      RAST_REQUIRE(v != nullptr, ErrorCode::kInvalidArgument, "style references a slot the fact lacks");
      out.push_back(*v);
    } else {
      out.push_back(tok);
    }
  }
  return out;
}

std::vector<Sample> SyntheticWorld::sample(std::size_t n, std::uint64_t stream) const {
  RAST_REQUIRE(n >= 1, ErrorCode::kInvalidArgument, "n_samples must be >= 1");
  std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x5eedu};
  std::mt19937_64 rng(seq);
  auto pick = [&](std::size_t size) { return static_cast<std::size_t>(rng() % size); };

  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t n_facts = 2 + pick(4);
    std::unordered_set<std::string> used;
    auto draw = [&](const std::vector<std::string>& pool) {
      for (;;) {
        const auto& v = pool[pick(pool.size())];
        if (used.insert(v).second) return v;
      }
    };
    std::vector<Fact> facts;
    Tokens context;
    std::vector<std::size_t> fact_offset;
    for (std::size_t f = 0; f < n_facts; ++f) {
      Fact fact{pick(relations_.size()), {}};
      for (Slot s : relations_[fact.relation].slots) {
        const auto& pool = s == Slot::kPerson ? persons_
                           : s == Slot::kOrg  ? orgs_
                           : s == Slot::kYear ? years_
                           : s == Slot::kPlace ? places_
                                               : books_;
        fact.values.emplace_back(s, draw(pool));
      }
      fact_offset.push_back(context.size());
      for (const auto& tok : relations_[fact.relation].surface) {
        auto s = slot_of(tok);
        context.push_back(s ? *fact.value(*s) : tok);
      }
      facts.push_back(std::move(fact));
    }
    const std::size_t fi = pick(facts.size());
    const auto& fact = facts[fi];
    const auto& rel = relations_[fact.relation];
    const Slot asked = rel.slots[pick(rel.slots.size())];
    const auto candidates = styles_for(fact.relation, asked);
    const auto& style = styles_[candidates[pick(candidates.size())]];

    // Character offset of the answer token.
    const std::string& answer = *fact.value(asked);
    std::size_t tok_index = fact_offset[fi];
    while (context[tok_index] != answer) ++tok_index;
    std::size_t char_offset = 0;
    for (std::size_t t = 0; t < tok_index; ++t) char_offset += context[t].size() + 1;

    Sample s;
    s.id = "s" + std::to_string(stream) + "-" + std::to_string(i);
    s.input = make_context_answer(join(context), answer, char_offset);
    s.question = Question::from_tokens(render_question(style, fact));
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Fact> SyntheticWorld::parse_context(const Tokens& context) const {
  std::vector<Fact> facts;
  std::size_t i = 0;
  while (i < context.size()) {
    std::size_t j = i;
    while (j < context.size() && context[j] != ".") ++j;
    const std::size_t len = j - i + (j < context.size() ? 1 : 0);
    for (std::size_t r = 0; r < relations_.size(); ++r) {
      const auto& surface = relations_[r].surface;
      if (surface.size() != len) continue;
      Fact fact{r, {}};
      bool ok = true;
      for (std::size_t k = 0; k < len && ok; ++k) {
        if (auto s = slot_of(surface[k])) {
          ok = entity_like(context[i + k]);
          fact.values.emplace_back(*s, context[i + k]);
        } else {
          ok = surface[k] == context[i + k];
        }
      }
      if (ok) {
        facts.push_back(std::move(fact));
        break;
      }
    }
    i = j + 1;
  }
  return facts;
}

std::vector<Sample> generate_world(std::uint64_t seed, std::size_t n_samples) {
  return SyntheticWorld(seed).sample(n_samples, 0);
}

QaPrediction OracleQa::predict(const Tokens& context, const Question& question) const {
  const auto& q = question.tokens;
  if (q.size() < 3 || q.back() != "?") return {};

  // Interrogative cue at position 0, or 1 after "in"/"by".
  std::size_t wh = 0;
  if (q[0] == "in" || q[0] == "by") wh = 1;
  static const std::unordered_set<std::string> interrogatives{"when", "who", "whom", "where", "what", "which"};
  if (!interrogatives.count(q[wh])) return {};

  // Exactly one relation named by its cue words.
  std::optional<std::size_t> relation;
  for (std::size_t r = 0; r < world_->relations().size(); ++r) {
    const auto& cues = world_->relations()[r].cue_words;
    const bool hit = std::any_of(q.begin(), q.end(), [&](const std::string& t) {
      return std::find(cues.begin(), cues.end(), t) != cues.end();
    });
    if (!hit) continue;
    if (relation) return {};
    relation = r;
  }
  if (!relation) return {};
  const auto& rel = world_->relations()[*relation];
  auto has_slot = [&](Slot s) { return std::find(rel.slots.begin(), rel.slots.end(), s) != rel.slots.end(); };

  std::optional<Slot> asked;
  const std::string& cue = q[wh];
  const std::string next = wh + 1 < q.size() ? q[wh + 1] : "";
  if (cue == "when") {
    asked = Slot::kYear;
  } else if (cue == "who" || cue == "whom") {
    asked = Slot::kPerson;
  } else if (cue == "where") {
    asked = Slot::kPlace;
  } else if (next == "year") {
    asked = Slot::kYear;
  } else if (next == "city") {
    asked = Slot::kPlace;
  } else if (next == "person" || next == "author") {
    asked = Slot::kPerson;
  } else if (next == "company") {
    asked = Slot::kOrg;
  } else if (next == "book") {
    asked = Slot::kBook;
  } else if (has_slot(Slot::kOrg)) {
    asked = Slot::kOrg;
  } else if (has_slot(Slot::kBook)) {
    asked = Slot::kBook;
  }
  if (!asked || !has_slot(*asked)) return {};

  std::vector<std::string> mentioned;
  for (const auto& t : q)
    if (entity_like(t)) mentioned.push_back(t);
  if (mentioned.empty()) return {};

  for (const auto& fact : world_->parse_context(context)) {
    if (fact.relation != *relation) continue;
    const bool all_given = std::all_of(mentioned.begin(), mentioned.end(), [&](const std::string& m) {
      return std::any_of(fact.values.begin(), fact.values.end(),
                         [&](const auto& sv) { return sv.first != *asked && sv.second == m; });
    });
    if (all_given) return {Tokens{*fact.value(*asked)}};
  }
  return {};
}

std::vector<double> OracleQa::answer_log_probs(const Tokens& context, const Question& question,
                                               const Tokens& answer) const {
  RAST_REQUIRE(eps_ > 0.0 && eps_ < 1.0, ErrorCode::kInvalidArgument, "oracle eps must lie in (0, 1)");
  const std::set<std::string> distinct(context.begin(), context.end());
  const double v = static_cast<double>(std::max<std::size_t>(distinct.size(), 2));
  const auto pred = predict(context, question);
  std::vector<double> out;
  out.reserve(answer.size());
  for (std::size_t i = 0; i < answer.size(); ++i) {
    if (!pred.answer) {
      out.push_back(-std::log(v));
    } else if (i < pred.answer->size() && (*pred.answer)[i] == answer[i]) {
      out.push_back(std::log1p(-eps_));
    } else {
      out.push_back(std::log(eps_ / (v - 1.0)));
    }
  }
  return out;
}

}  // namespace rast::synth
