#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "physground/concepts.h"

namespace physground {

struct AnswerEntry {
  std::string answer;
  double probability = 0;
  friend bool operator==(const AnswerEntry&, const AnswerEntry&) = default;
};

// Candidate answers with likelihoods. Backends may return values that are
// only known up to a per-query positive constant; `normalized` says whether
// they sum to one.
class AnswerDistribution {
 public:
  AnswerDistribution() = default;
  // Throws InvalidInput on empty, duplicate, negative or (when normalized)
  // non-unit-sum entries.
  AnswerDistribution(std::vector<AnswerEntry> entries, bool normalized);

  const std::vector<AnswerEntry>& entries() const { return entries_; }
  bool normalized() const { return normalized_; }
  // Case-insensitive lookup.
  std::optional<double> probability(std::string_view answer) const;
  AnswerDistribution renormalized() const;
  // Sorted by descending probability, ties alphabetical (case-insensitive).
  std::vector<AnswerEntry> ranked() const;

  friend bool operator==(const AnswerDistribution&, const AnswerDistribution&) = default;

 private:
  std::vector<AnswerEntry> entries_;
  bool normalized_ = false;
};

struct OracleRequest {
  std::string object;  // instance id
  std::optional<BoundingBox> box;
  std::string prompt;
  std::vector<std::string> candidates;  // empty: backend chooses
};

struct ConceptScore {
  std::string object;
  std::string concept_name;
  double score = 1.0;      // p(yes) / p(no)
  double log_score = 0.0;  // ln(score); +-inf for the sentinels below
  // p(no) == 0: score is +inf. p(yes) == 0: score is 0 and log_score -inf.
  bool infinite = false;
  bool zero = false;
};

// s(o, c) = p(yes) / p(no). Throws InvalidInput when "yes" or "no" is
// missing or both are zero.
ConceptScore concept_score(const AnswerDistribution& dist, std::string object = {}, std::string concept_name = {});

// Wraps a question in the answer template used for every oracle query.
std::string answer_prompt_template(std::string_view question);
// Warnings for suspicious questions (currently: empty text).
std::vector<std::string> lint_question(std::string_view question);
// Inverse of answer_prompt_template; returns the text unchanged when it is not wrapped.
std::string strip_answer_template(std::string_view prompt);

class Oracle {
 public:
  virtual ~Oracle() = default;
  // Must be safe to call concurrently.
  virtual AnswerDistribution query(const OracleRequest& request) = 0;
  virtual std::string model_id() const = 0;
};

// Ground truth for one object, shared by the mock oracle and the world.
struct PropertyTable {
  // Continuous concepts store latent log-scores: the mock's yes/no ratio is exp(value).
  std::map<std::string, double> continuous;
  std::map<std::string, std::string> categorical;
  bool container = false;
  bool furniture = false;

  friend bool operator==(const PropertyTable&, const PropertyTable&) = default;
};

using GroundTruth = std::map<std::string, PropertyTable>;

struct MockConfig {
  double flip_probability = 0.0;  // label-flip noise
  double logit_jitter = 0.0;      // std-dev of Gaussian noise on continuous logits
  std::uint64_t seed = 0;
};

// Answers from a ground-truth table. The question is routed to a concept
// by keywords; unroutable questions get mostly "unknown". Noise is drawn
// from a stream keyed by (seed, object, question), so answers do not
// depend on query order.
class MockOracle : public Oracle {
 public:
  MockOracle(GroundTruth truth, MockConfig config = {},
             const ConceptRegistry& registry = ConceptRegistry::shipped());

  AnswerDistribution query(const OracleRequest& request) override;
  std::string model_id() const override { return "mock"; }

  const GroundTruth& truth() const { return truth_; }

 private:
  GroundTruth truth_;
  MockConfig config_;
  const ConceptRegistry* registry_;
};

// Replays recorded answers. Each entry is consumed once; the first unused
// entry matching (object, question) is returned.
class ScriptedOracle : public Oracle {
 public:
  struct Entry {
    std::string object;
    std::string question;
    AnswerDistribution answer;
  };

  explicit ScriptedOracle(std::vector<Entry> entries, std::string model = "scripted");

  AnswerDistribution query(const OracleRequest& request) override;
  std::string model_id() const override { return model_; }
  std::size_t remaining() const;

 private:
  mutable std::mutex mutex_;
  std::vector<Entry> entries_;
  std::vector<bool> used_;
  std::string model_;
};

// Keyword routing used by the mock: which concept (and label, for yes/no
// questions about a categorical value) a free-form question asks about.
struct QuestionRoute {
  enum class Kind { continuous_yes_no, label_yes_no, label_open, container_yes_no, furniture_yes_no, unknown };
  Kind kind = Kind::unknown;
  std::string concept_name;
  std::string label;     // for label_yes_no
  bool negated = false;  // "Is this object not plastic?"
};

QuestionRoute route_question(std::string_view question, const ConceptRegistry& registry = ConceptRegistry::shipped());

}  // namespace physground
