#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "physground/errors.h"
#include "physground/oracle.h"
#include "physground/planner.h"

namespace physground {

class ExecutionError : public Error {
 public:
  using Error::Error;
};

enum class Place { table, side, inside, with_human, held };

struct Location {
  Place place = Place::table;
  std::string container;  // for Place::inside

  friend bool operator==(const Location&, const Location&) = default;
};

std::string to_string(const Location& location);

struct WorldObject {
  std::string id;
  char letter = 'A';
  std::string category;  // detector label shown to the planner
  std::string name;      // precise description, never shown to the planner
  PropertyTable properties;
  Location location;

  bool movable() const { return !properties.furniture; }
  friend bool operator==(const WorldObject&, const WorldObject&) = default;
};

// A value type: execute returns a new state.
class WorldState {
 public:
  WorldState() = default;
  // Throws InvalidInput on duplicate ids/letters, unknown or cyclic
  // containment, or furniture placed anywhere but its start.
  explicit WorldState(std::vector<WorldObject> objects);

  const std::vector<WorldObject>& objects() const { return objects_; }
  const WorldObject* find(std::string_view id) const;
  const WorldObject* by_letter(char letter) const;
  std::size_t index_of(std::string_view id) const;  // throws NotFound

  const std::optional<std::string>& robot_at() const { return robot_at_; }
  const std::optional<std::string>& held() const { return held_; }
  const Location& origin(std::size_t index) const { return origin_.at(index); }
  bool moved(std::size_t index) const { return objects_.at(index).location != origin_.at(index); }
  const std::vector<PlanStep>& history() const { return history_; }
  bool finished() const { return finished_; }

  // Throws ExecutionError ("immovable", non-container targets, picking
  // while holding, steps after done, ...).
  WorldState execute(const PlanStep& step) const;

  GroundTruth ground_truth() const;
  SceneManifest manifest(std::string image_ref = {}) const;

  friend bool operator==(const WorldState&, const WorldState&) = default;

 private:
  bool contains_transitively(std::size_t outer, std::size_t inner) const;

  std::vector<WorldObject> objects_;
  std::vector<Location> origin_;
  std::optional<std::string> robot_at_;
  std::optional<std::string> held_;
  std::vector<PlanStep> history_;
  bool finished_ = false;
};

struct ExecutionResult {
  WorldState state;
  std::size_t executed = 0;
  std::optional<std::string> error;  // "step 3 (Pick up object B): ..." when a step failed
};

// Stops at the first failing step.
ExecutionResult execute_plan(const WorldState& start, const std::vector<PlanStep>& plan);

// --- predicates ---------------------------------------------------------------

struct ScoreResult {
  bool success = false;
  std::string failed_clause;
  std::string witness;
};

// Declarative success condition over a final state. Grammar:
//
//   predicate := clause { "and" clause }
//   clause    := set op set | "count(" set ")" op INT           op: == <= >=
//   set       := term { ("+" | "-") term }
//   term      := "(" set ")" | "none" | "all" | "{" LETTER {"," LETTER} "}"
//              | "where(" cond ")" | ("top" | "bottom") "(" CONCEPT "," INT ["," set] ")"
//              | "side" | "human" | "table" | "moved" | "robot" | "at" | "inside(" target ")"
//   target    := LETTER | ("argmax" | "argmin") "(" CONCEPT "," set ")" | "the(" set ")" | "any(" set ")"
//   cond      := conj { "or" conj };  conj := unary { "and" unary }
//   unary     := "not" unary | "(" cond ")" | "container" | "furniture" | "movable"
//              | CONCEPT ("=" | "!=") LABEL
//
// "robot" is the held object and "at" the object the robot stands at.
// Regions are read from the final state; cond, top, bottom, argmax and
// argmin read ground truth. Ties in rankings go to fixture order.
class Predicate {
 public:
  Predicate() = default;
  // Throws InvalidInput with the column of the problem.
  static Predicate parse(std::string_view text);

  const std::string& text() const { return text_; }
  ScoreResult evaluate(const WorldState& state) const;

  struct Node;

 private:
  std::string text_;
  std::vector<std::shared_ptr<const Node>> clauses_;
  std::vector<std::string> clause_text_;
};

enum class TaskCategory { single_concept, multi_concept, common_knowledge };
std::string_view to_string(TaskCategory category);
TaskCategory parse_task_category(std::string_view text);

struct TaskSpec {
  std::string id;
  std::string instruction;
  TaskCategory category = TaskCategory::single_concept;
  PromptVariant variant = PromptVariant::interactive;
  Predicate predicate;
  // Set when the instruction admits more than one reading.
  bool ambiguous = false;
  std::string note;
};

ScoreResult score_task(const WorldState& final_state, const TaskSpec& task);

struct Scene {
  std::string name;
  std::string image_ref;
  WorldState world;
  SceneManifest manifest;
  std::vector<TaskSpec> tasks;

  const TaskSpec& task(std::string_view id) const;  // throws NotFound
};

// Parses a scene fixture; letters follow object order unless given.
// Throws InvalidInput with the line number.
Scene build_scene(std::string_view text, std::string source = "<scene>");
Scene load_scene(const std::string& path);
// Scenes compiled into the library, by name ("robot_scene_1", ...).
Scene shipped_scene(std::string_view name);
std::vector<std::string> shipped_scene_names();

struct EpisodeScore {
  bool success = false;
  std::string reason;
};

// Executes the transcript's final plan (or nothing, for infeasible) and
// checks the task predicate. With `violations_fail`, plans that broke
// validate_plan fail outright.
EpisodeScore score_episode(const Scene& scene, const TaskSpec& task, const Transcript& transcript,
                           bool violations_fail = true);

}  // namespace physground
