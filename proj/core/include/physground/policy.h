#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "physground/datapipe.h"
#include "physground/planner.h"

namespace physground {

// One yes/no property a selected object must have.
struct Requirement {
  enum class Kind { container, furniture, label };
  Kind kind = Kind::label;
  std::string concept_name;  // for Kind::label
  std::string label;
  // The question is phrased negatively ("Is this object not plastic?").
  bool negated = false;
  // Expected answer to the question.
  bool want_yes = true;
  std::string question;

  friend bool operator==(const Requirement&, const Requirement&) = default;
};

struct Superlative {
  std::string concept_name;
  bool maximize = true;
  std::string question;

  friend bool operator==(const Superlative&, const Superlative&) = default;
};

struct Selector {
  enum class Quantity { all, one, count };
  Quantity quantity = Quantity::one;
  std::size_t count = 1;
  std::vector<Requirement> requirements;
  std::optional<Superlative> superlative;
  // Rank by confidence in the last requirement ("most certain is plastic").
  bool by_certainty = false;
  bool include_furniture = false;
  // Keep only detections whose category contains one of these words.
  std::vector<std::string> category_words;

  friend bool operator==(const Selector&, const Selector&) = default;
};

enum class TaskAction { bring, side, into, go };

struct Intent {
  TaskAction action = TaskAction::bring;
  Selector sources;
  std::optional<Selector> target;  // for TaskAction::into

  friend bool operator==(const Intent&, const Intent&) = default;
};

// Reads the handful of instruction shapes used by the shipped scenes
// ("Move all objects that are not plastic to the side.", "Bring me the
// heaviest object.", ...). Throws InvalidInput when nothing matches.
Intent parse_instruction(std::string_view instruction);

// Large or built-in objects the policies never try to move.
bool is_furniture_category(std::string_view category);

// Deterministic stand-in for the planning LLM. Stateless: every reply is
// derived from the conversation (prompt, earlier questions and answers).
// Asks about requirements first, then the superlative concept, one
// question per turn, then emits a plan.
class RulePolicy : public ChatBackend {
 public:
  std::string reply(const std::vector<ChatMessage>& conversation) override;
  std::string model_id() const override { return "rule-policy"; }
};

// Same instruction reading without any questions: properties come from
// category-level priors (label and tier tables, container list).
class PriorPolicy : public ChatBackend {
 public:
  explicit PriorPolicy(const TierTable& tiers = TierTable::shipped(),
                       const CategoryLabelTable& labels = CategoryLabelTable::shipped(),
                       const ConceptRegistry& registry = ConceptRegistry::shipped());
  std::string reply(const std::vector<ChatMessage>& conversation) override;
  std::string model_id() const override { return "prior-policy"; }

 private:
  const TierTable* tiers_;
  const CategoryLabelTable* labels_;
  const ConceptRegistry* registry_;
};

}  // namespace physground
