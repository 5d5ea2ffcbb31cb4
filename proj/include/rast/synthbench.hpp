#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rast/dataset.hpp"
#include "rast/reward.hpp"

namespace rast::synth {

enum class Slot { kPerson, kOrg, kYear, kPlace, kBook };

struct Relation {
  std::string name;
  Tokens surface;            // context sentence, slots written as {P} {O} {Y} {L} {B}
  std::vector<Slot> slots;
  Tokens cue_words;          // question words that identify the relation
};

/// One question style: a relation, the slot it asks for, and a surface pattern.
struct QuestionStyle {
  std::size_t relation;
  Slot asked;
  Tokens pattern;
};

struct Fact {
  std::size_t relation;
  std::vector<std::pair<Slot, std::string>> values;

  const std::string* value(Slot s) const;
};

/// Seeded toy world of relational facts rendered as short passages.
class SyntheticWorld {
 public:
  explicit SyntheticWorld(std::uint64_t seed);

  /// n samples drawn with the given stream id; deterministic in (seed, stream).
  std::vector<Sample> sample(std::size_t n, std::uint64_t stream = 0) const;

  const std::vector<Relation>& relations() const { return relations_; }
  const std::vector<QuestionStyle>& styles() const { return styles_; }
  std::uint64_t seed() const { return seed_; }

  /// Facts recoverable from a passage rendered by this world.
  std::vector<Fact> parse_context(const Tokens& context) const;
  /// Styles available for a (relation, slot) pair.
  std::vector<std::size_t> styles_for(std::size_t relation, Slot asked) const;
  Tokens render_question(const QuestionStyle& style, const Fact& fact) const;

 private:
  std::uint64_t seed_;
  std::vector<Relation> relations_;
  std::vector<QuestionStyle> styles_;
  std::vector<std::string> persons_, orgs_, places_, books_, years_;
};

/// The world for `seed` sampled with stream 0.
std::vector<Sample> generate_world(std::uint64_t seed, std::size_t n_samples);

/// Rule-based QA over synthetic passages.
///
/// A question is answerable when it ends in "?", opens with an interrogative
/// cue (optionally after "in"/"by"), names exactly one relation through its
/// cue words, asks for a slot that relation has, and every entity-like token
/// it mentions belongs to one fact of that relation in the passage. The
/// answer is that fact's asked slot.
///
/// Token distribution: 1 - eps on the predicted answer token, eps spread over
/// the other V - 1 passage tokens, where V is the number of distinct passage
/// tokens. Unanswerable questions get the uniform 1/V.
class OracleQa : public QaBackend {
 public:
  explicit OracleQa(const SyntheticWorld& world, double eps = 0.05) : world_(&world), eps_(eps) {}

  std::vector<double> answer_log_probs(const Tokens& context, const Question& question,
                                       const Tokens& answer) const override;
  QaPrediction predict(const Tokens& context, const Question& question) const override;

  double eps() const { return eps_; }

 private:
  const SyntheticWorld* world_;
  double eps_;
};

}  // namespace rast::synth
