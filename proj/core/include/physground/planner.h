#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "physground/oracle.h"

namespace physground {

struct Detection {
  char letter = 'A';
  std::string category;
  std::string object_id;  // oracle/world id; defaults to the letter

  friend bool operator==(const Detection&, const Detection&) = default;
};

class SceneManifest {
 public:
  SceneManifest() = default;
  // Throws InvalidInput on duplicate or non A-Z letters.
  explicit SceneManifest(std::vector<Detection> detections, std::string image_ref = {});
  // Letters A, B, ... in the given order; object ids equal the letters.
  static SceneManifest from_categories(const std::vector<std::string>& categories, std::string image_ref = {});
  // Parses "A (bottle), B (pitcher (container))".
  static SceneManifest parse_listing(std::string_view listing);

  const std::vector<Detection>& detections() const { return detections_; }
  const std::string& image_ref() const { return image_ref_; }
  bool empty() const { return detections_.empty(); }
  const Detection* find(char letter) const;
  // "A (bottle), B (bowl)"
  std::string listing() const;

  friend bool operator==(const SceneManifest&, const SceneManifest&) = default;

 private:
  std::vector<Detection> detections_;
  std::string image_ref_;
};

enum class Primitive { go_to, pick_up, bring_to_human, put_down, move_to_side, move_into, done };

using PrimitiveSet = std::set<Primitive>;

const PrimitiveSet& pick_and_place_primitives();
const PrimitiveSet& side_primitives();
const PrimitiveSet& into_primitives();

std::size_t arity(Primitive p);
std::string_view to_string(Primitive p);  // snake_case name
Primitive parse_primitive_name(std::string_view name);

struct PlanStep {
  Primitive primitive = Primitive::done;
  std::vector<char> args;

  friend bool operator==(const PlanStep&, const PlanStep&) = default;
};

// "Go to object E", "Move A into B", "Done".
std::string format_step(const PlanStep& step);
// "Plan:\n1. Go to object E\n...\n4. Done"
std::string format_plan(const std::vector<PlanStep>& plan);

struct Question {
  std::vector<char> letters;
  std::string text;
  // Word between "about" and the bracket: "", "object" or "objects".
  std::string about;

  friend bool operator==(const Question&, const Question&) = default;
};

// "Question about [A, B]: Is this object heavy?"
std::string format_question(const Question& q);

enum class TurnKind { question, plan, infeasible, malformed };
std::string_view to_string(TurnKind kind);

struct Turn {
  TurnKind kind = TurnKind::malformed;
  // Lines before the question or plan, verbatim ("Thought:" lines and any
  // statement). Never interpreted.
  std::vector<std::string> preamble;
  std::optional<Question> question;
  std::vector<PlanStep> plan;
  // Lines after the plan block, verbatim.
  std::vector<std::string> trailer;
  // Parse problems (malformed) or notes such as unknown letters.
  std::vector<std::string> diagnostics;
  // validate_plan result for plan and infeasible turns.
  std::vector<std::string> violations;
  std::vector<char> unknown_letters;

  std::vector<std::string> thoughts() const;
  // Non-"Thought:" preamble lines joined with newlines.
  std::string statement() const;
};

// Never throws.
Turn parse_turn(std::string_view text, const SceneManifest& manifest,
                const PrimitiveSet& active = pick_and_place_primitives());
std::string format_turn(const Turn& turn);

// Violations of primitive membership, arity, letter resolution and the
// terminal "done". Empty when valid.
std::vector<std::string> validate_plan(const std::vector<PlanStep>& plan, const SceneManifest& manifest,
                                       const PrimitiveSet& active = pick_and_place_primitives());

// --- answers ------------------------------------------------------------------

struct AnswerLine {
  char letter = 'A';
  std::vector<AnswerEntry> answers;  // as printed, best first

  friend bool operator==(const AnswerLine&, const AnswerLine&) = default;
};

// "A: no (0.50), yes (0.24), unknown (0.21)": the top k answers, two decimals.
std::string format_answer_line(char letter, const AnswerDistribution& dist, std::size_t k = 3);
std::string format_answer_lines(const std::vector<AnswerLine>& lines);
// Parses lines like the above; throws InvalidInput.
std::vector<AnswerLine> parse_answer_lines(std::string_view text);

struct AnswerOptions {
  std::size_t k = 3;
  bool renormalize = false;  // print the raw backend values by default
  bool concurrent = false;   // one thread per letter
};

// One line per letter, in letter order. Oracle errors propagate.
std::string answer_questions(const Question& question, Oracle& oracle, const SceneManifest& manifest,
                             const AnswerOptions& options = {});

// --- prompts ------------------------------------------------------------------

enum class PromptVariant { interactive, no_vlm, side_tasks, into_tasks };
std::string_view to_string(PromptVariant variant);
// Throws InvalidInput for unknown names.
PromptVariant parse_prompt_variant(std::string_view name);
const PrimitiveSet& primitives_for(PromptVariant variant);
bool asks_questions(PromptVariant variant);

// Sentence appended for the side/into variants, empty otherwise.
std::string_view constraint_sentence(PromptVariant variant);

// The shipped prompt with the object list and instruction filled in.
// Throws InvalidInput for an empty manifest.
std::string assemble_prompt(PromptVariant variant, const SceneManifest& manifest, std::string_view instruction);

// --- episodes -----------------------------------------------------------------

struct ChatMessage {
  std::string role;  // "user" or "assistant"
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string reply(const std::vector<ChatMessage>& conversation) = 0;
  virtual std::string model_id() const = 0;
};

// Returns canned replies in order; throws TransportError when exhausted.
class ScriptedChat : public ChatBackend {
 public:
  explicit ScriptedChat(std::vector<std::string> replies, std::string model = "scripted-chat");
  std::string reply(const std::vector<ChatMessage>& conversation) override;
  std::string model_id() const override { return model_; }

 private:
  std::vector<std::string> replies_;
  std::size_t next_ = 0;
  std::string model_;
};

struct EpisodeLimits {
  std::size_t max_turns = 16;
  std::size_t max_questions = 12;
};

struct EpisodeOptions {
  PromptVariant variant = PromptVariant::interactive;
  EpisodeLimits limits;
  AnswerOptions answers;
};

enum class Outcome { plan, infeasible, non_terminating, malformed, error };
std::string_view to_string(Outcome outcome);
Outcome parse_outcome(std::string_view text);

struct Transcript {
  std::string instruction;
  PromptVariant variant = PromptVariant::interactive;
  EpisodeLimits limits;
  SceneManifest manifest;
  std::string policy_model;
  std::string oracle_model;
  // Full conversation; the first message is the assembled prompt.
  std::vector<ChatMessage> messages;
  // Milliseconds spent producing each message (0 for the prompt).
  std::vector<double> timings_ms;
  std::size_t questions = 0;
  Outcome outcome = Outcome::non_terminating;
  std::vector<PlanStep> plan;
  std::vector<std::string> violations;
  std::string note;

  bool terminated() const { return outcome == Outcome::plan || outcome == Outcome::infeasible; }
};

// Alternates policy turns and answer blocks until a plan, an infeasibility
// statement, or a limit. Never throws for backend failures; they end the
// episode with outcome error.
Transcript run_episode(ChatBackend& policy, Oracle& oracle, const SceneManifest& manifest,
                       std::string_view instruction, const EpisodeOptions& options = {});

// One JSON object per line: a header, then one line per message, then the outcome.
std::string transcript_to_jsonl(const Transcript& t, bool include_timing = true);
Transcript transcript_from_jsonl(std::string_view text, std::string_view source = "<transcript>");

// Re-runs a transcript with its own policy replies and its answer values
// (as printed) through the protocol.
Transcript replay(const Transcript& t);

}  // namespace physground
