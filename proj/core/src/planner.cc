#include "physground/planner.h"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <future>
#include <map>
#include <regex>

#include "json_codec.h"
#include "physground/errors.h"
#include "physground/kvdoc.h"
#include "physground/shipped_data.h"

namespace physground {

namespace {

bool is_letter(char c) { return c >= 'A' && c <= 'Z'; }

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(start, end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = end + 1;
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  return lines;
}

bool starts_with_icase(std::string_view text, std::string_view prefix) {
  return text.size() >= prefix.size() && to_lower(text.substr(0, prefix.size())) == to_lower(prefix);
}

bool is_thought(std::string_view line) { return starts_with_icase(trim(line), "thought:"); }

std::string join_letters(const std::vector<char>& letters) {
  std::string out;
  for (std::size_t i = 0; i < letters.size(); ++i) {
    if (i) out += ", ";
    out += letters[i];
  }
  return out;
}

std::string format_probability(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", p);
  return buf;
}

}  // namespace

// --- manifest -----------------------------------------------------------------

SceneManifest::SceneManifest(std::vector<Detection> detections, std::string image_ref)
    : detections_(std::move(detections)), image_ref_(std::move(image_ref)) {
  std::set<char> seen;
  for (auto& d : detections_) {
    if (!is_letter(d.letter)) throw InvalidInput(std::string("manifest letter '") + d.letter + "' is not in A-Z");
    if (!seen.insert(d.letter).second) throw InvalidInput(std::string("duplicate manifest letter '") + d.letter + "'");
    if (trim(d.category).empty()) throw InvalidInput(std::string("detection ") + d.letter + " has no category");
    if (d.object_id.empty()) d.object_id = std::string(1, d.letter);
  }
}

SceneManifest SceneManifest::from_categories(const std::vector<std::string>& categories, std::string image_ref) {
  if (categories.size() > 26) throw InvalidInput("a manifest holds at most 26 detections");
  std::vector<Detection> out;
  for (std::size_t i = 0; i < categories.size(); ++i)
    out.push_back({static_cast<char>('A' + i), categories[i], {}});
  return SceneManifest(std::move(out), std::move(image_ref));
}

SceneManifest SceneManifest::parse_listing(std::string_view listing) {
  std::vector<Detection> out;
  std::size_t i = 0;
  auto fail = [&](const std::string& what) {
    throw InvalidInput("object list, column " + std::to_string(i + 1) + ": " + what);
  };
  auto skip_space = [&] {
    while (i < listing.size() && listing[i] == ' ') ++i;
  };
  skip_space();
  while (i < listing.size()) {
    if (!is_letter(listing[i])) fail("expected an object letter");
    const char letter = listing[i++];
    skip_space();
    if (i >= listing.size() || listing[i] != '(') fail("expected '(' after the letter");
    const std::size_t open = ++i;
    int depth = 1;
    while (i < listing.size() && depth > 0) {
      if (listing[i] == '(') ++depth;
      if (listing[i] == ')') --depth;
      ++i;
    }
    if (depth != 0) fail("unbalanced parentheses");
    out.push_back({letter, std::string(listing.substr(open, i - 1 - open)), {}});
    skip_space();
    if (i < listing.size()) {
      if (listing[i] != ',') fail("expected ','");
      ++i;
      skip_space();
    }
  }
  return SceneManifest(std::move(out));
}

const Detection* SceneManifest::find(char letter) const {
  for (const auto& d : detections_)
    if (d.letter == letter) return &d;
  return nullptr;
}

std::string SceneManifest::listing() const {
  std::string out;
  for (std::size_t i = 0; i < detections_.size(); ++i) {
    if (i) out += ", ";
    out += detections_[i].letter;
    out += " (" + detections_[i].category + ")";
  }
  return out;
}

// --- primitives ---------------------------------------------------------------

const PrimitiveSet& pick_and_place_primitives() {
  static const PrimitiveSet s{Primitive::go_to, Primitive::pick_up, Primitive::bring_to_human, Primitive::put_down,
                              Primitive::done};
  return s;
}

const PrimitiveSet& side_primitives() {
  static const PrimitiveSet s{Primitive::move_to_side, Primitive::done};
  return s;
}

const PrimitiveSet& into_primitives() {
  static const PrimitiveSet s{Primitive::move_into, Primitive::done};
  return s;
}

std::size_t arity(Primitive p) {
  switch (p) {
    case Primitive::move_into: return 2;
    case Primitive::done: return 0;
    default: return 1;
  }
}

std::string_view to_string(Primitive p) {
  switch (p) {
    case Primitive::go_to: return "go_to";
    case Primitive::pick_up: return "pick_up";
    case Primitive::bring_to_human: return "bring_to_human";
    case Primitive::put_down: return "put_down";
    case Primitive::move_to_side: return "move_to_side";
    case Primitive::move_into: return "move_into";
    case Primitive::done: return "done";
  }
  return "done";
}

Primitive parse_primitive_name(std::string_view name) {
  for (auto p : {Primitive::go_to, Primitive::pick_up, Primitive::bring_to_human, Primitive::put_down,
                 Primitive::move_to_side, Primitive::move_into, Primitive::done})
    if (to_string(p) == name) return p;
  throw InvalidInput("unknown primitive '" + std::string(name) + "'");
}

std::string format_step(const PlanStep& step) {
  auto arg = [&](std::size_t i) { return i < step.args.size() ? std::string(1, step.args[i]) : std::string("?"); };
  switch (step.primitive) {
    case Primitive::go_to: return "Go to object " + arg(0);
    case Primitive::pick_up: return "Pick up object " + arg(0);
    case Primitive::bring_to_human: return "Bring to human object " + arg(0);
    case Primitive::put_down: return "Put down object " + arg(0);
    case Primitive::move_to_side: return "Move " + arg(0) + " to the side";
    case Primitive::move_into: return "Move " + arg(0) + " into " + arg(1);
    case Primitive::done: return "Done";
  }
  return "Done";
}

std::string format_plan(const std::vector<PlanStep>& plan) {
  std::string out = "Plan:";
  for (std::size_t i = 0; i < plan.size(); ++i) out += "\n" + std::to_string(i + 1) + ". " + format_step(plan[i]);
  return out;
}

std::string format_question(const Question& q) {
  std::string out = "Question about ";
  if (!q.about.empty()) out += q.about + " ";
  return out + "[" + join_letters(q.letters) + "]: " + q.text;
}

std::string_view to_string(TurnKind kind) {
  switch (kind) {
    case TurnKind::question: return "question";
    case TurnKind::plan: return "plan";
    case TurnKind::infeasible: return "infeasible";
    case TurnKind::malformed: return "malformed";
  }
  return "malformed";
}

std::vector<std::string> Turn::thoughts() const {
  std::vector<std::string> out;
  for (const auto& l : preamble)
    if (is_thought(l)) out.push_back(l);
  return out;
}

std::string Turn::statement() const {
  std::vector<std::string> out;
  for (const auto& l : preamble)
    if (!is_thought(l) && !trim(l).empty()) out.push_back(l);
  return join(out, "\n");
}

// --- turn parsing -------------------------------------------------------------

namespace {

struct StepParse {
  std::optional<PlanStep> step;
  std::string error;
  std::vector<char> letters;  // letters seen, even when the step is unknown
};

StepParse parse_step(const std::string& body) {
  static const std::string L = R"(\[?([A-Za-z])\]?)";
  static const std::string obj = "(?:object |container )?";
  struct Rule {
    Primitive primitive;
    std::regex re;
  };
  static const std::vector<Rule> rules = [&] {
    auto rx = [](const std::string& s) { return std::regex("^" + s + R"(\.?$)", std::regex::icase); };
    return std::vector<Rule>{
        {Primitive::go_to, rx("go to " + obj + L)},
        {Primitive::pick_up, rx("pick up " + obj + L)},
        {Primitive::bring_to_human, rx("bring to (?:the )?human " + obj + L)},
        {Primitive::bring_to_human, rx("bring " + obj + L + " to (?:the )?human")},
        {Primitive::put_down, rx("put down " + obj + L)},
        {Primitive::move_to_side, rx("move " + obj + L + " to the side")},
        {Primitive::move_into, rx("move " + obj + L + " into " + obj + L)},
        {Primitive::done, rx("done")},
    };
  }();
  StepParse out;
  const auto text = trim(body);
  for (const auto& r : rules) {
    std::smatch m;
    if (!std::regex_match(text, m, r.re)) continue;
    PlanStep step{r.primitive, {}};
    for (std::size_t g = 1; g < m.size(); ++g)
      step.args.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(m[g].str()[0]))));
    out.letters = step.args;
    out.step = std::move(step);
    return out;
  }
  static const std::regex letter_re(R"(\b([A-Z])\b)");
  for (auto it = std::sregex_iterator(text.begin(), text.end(), letter_re); it != std::sregex_iterator(); ++it)
    out.letters.push_back((*it)[1].str()[0]);
  out.error = "unknown primitive '" + text + "'";
  return out;
}

std::vector<char> unresolved(const std::vector<char>& letters, const SceneManifest& manifest) {
  std::vector<char> out;
  for (char c : letters)
    if (!manifest.find(c) && std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  return out;
}

}  // namespace

Turn parse_turn(std::string_view text, const SceneManifest& manifest, const PrimitiveSet& active) {
  Turn turn;
  const auto lines = split_lines(text);
  static const std::regex question_re(R"(^\s*Question about (?:(objects?) )?\[([^\]]*)\]:\s?(.*)$)", std::regex::icase);
  static const std::regex step_re(R"(^\s*(\d+)[.)]\s*(.*)$)");

  std::size_t plan_at = lines.size();
  for (std::size_t i = 0; i < lines.size(); ++i)
    if (!is_thought(lines[i]) && starts_with_icase(trim(lines[i]), "plan:")) {
      plan_at = i;
      break;
    }

  if (plan_at == lines.size()) {
    // No plan header: a question, a bare infeasibility statement, or malformed.
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (is_thought(lines[i])) continue;
      std::smatch m;
      if (!std::regex_match(lines[i], m, question_re)) continue;
      turn.preamble.assign(lines.begin(), lines.begin() + static_cast<std::ptrdiff_t>(i));
      Question q;
      q.about = m[1].str();
      q.text = m[3].str();
      bool ok = true;
      for (const auto& part : split_list(m[2].str())) {
        if (part.size() != 1 || !is_letter(part[0])) {
          turn.diagnostics.push_back("line " + std::to_string(i + 1) + ": '" + part + "' is not an object letter");
          ok = false;
          continue;
        }
        q.letters.push_back(part[0]);
      }
      if (q.letters.empty() && ok) {
        turn.diagnostics.push_back("line " + std::to_string(i + 1) + ": question names no objects");
        ok = false;
      }
      if (trim(q.text).empty()) {
        turn.diagnostics.push_back("line " + std::to_string(i + 1) + ": question has no text");
        ok = false;
      }
      for (std::size_t j = i + 1; j < lines.size(); ++j)
        if (std::regex_match(lines[j], question_re)) {
          turn.diagnostics.push_back("line " + std::to_string(j + 1) + ": only one question per turn");
          ok = false;
        }
      turn.trailer.assign(lines.begin() + static_cast<std::ptrdiff_t>(i) + 1, lines.end());
      turn.unknown_letters = unresolved(q.letters, manifest);
      for (char c : turn.unknown_letters) turn.diagnostics.push_back(std::string("unknown object letter '") + c + "'");
      turn.question = std::move(q);
      turn.kind = ok ? TurnKind::question : TurnKind::malformed;
      return turn;
    }
    // "It is not possible ... Done"
    std::size_t last = lines.size();
    while (last > 0 && trim(lines[last - 1]).empty()) --last;
    if (last > 0) {
      std::smatch m;
      auto tail = trim(lines[last - 1]);
      if (std::regex_match(tail, m, step_re)) tail = trim(m[2].str());
      static const std::regex done_re(R"(^done\.?$)", std::regex::icase);
      turn.preamble.assign(lines.begin(), lines.begin() + static_cast<std::ptrdiff_t>(last - 1));
      if (std::regex_match(tail, done_re) && !turn.statement().empty()) {
        turn.plan = {PlanStep{Primitive::done, {}}};
        turn.kind = TurnKind::infeasible;
        turn.violations = validate_plan(turn.plan, manifest, active);
        return turn;
      }
    }
    turn.preamble = lines;
    turn.diagnostics.push_back(lines.empty() ? "empty reply" : "no question or plan found");
    return turn;
  }

  turn.preamble.assign(lines.begin(), lines.begin() + static_cast<std::ptrdiff_t>(plan_at));
  std::vector<std::string> body;
  if (auto rest = trim(trim(lines[plan_at]).substr(5)); !rest.empty()) body.push_back(rest);
  body.insert(body.end(), lines.begin() + static_cast<std::ptrdiff_t>(plan_at) + 1, lines.end());

  bool ok = true;
  std::size_t expected = 1;
  std::size_t i = 0;
  for (; i < body.size(); ++i) {
    if (trim(body[i]).empty()) {
      if (turn.plan.empty()) continue;
      break;
    }
    std::smatch m;
    if (!std::regex_match(body[i], m, step_re)) break;
    const auto where = "plan line " + std::to_string(expected);
    if (std::stoul(m[1].str()) != expected)
      turn.diagnostics.push_back(where + ": numbered " + m[1].str() + ", expected " + std::to_string(expected));
    auto parsed = parse_step(m[2].str());
    for (char c : unresolved(parsed.letters, manifest)) {
      if (std::find(turn.unknown_letters.begin(), turn.unknown_letters.end(), c) == turn.unknown_letters.end())
        turn.unknown_letters.push_back(c);
      if (!parsed.step) turn.diagnostics.push_back(where + ": unknown object letter '" + std::string(1, c) + "'");
    }
    if (!parsed.step) {
      turn.diagnostics.push_back(where + ": " + parsed.error);
      ok = false;
    } else {
      turn.plan.push_back(*parsed.step);
    }
    ++expected;
  }
  turn.trailer.assign(body.begin() + static_cast<std::ptrdiff_t>(i), body.end());
  if (turn.plan.empty() && ok) {
    turn.diagnostics.push_back("plan has no steps");
    ok = false;
  }
  if (!ok) {
    turn.kind = TurnKind::malformed;
    return turn;
  }
  turn.violations = validate_plan(turn.plan, manifest, active);
  const bool only_done = turn.plan.size() == 1 && turn.plan[0].primitive == Primitive::done;
  turn.kind = only_done && !turn.statement().empty() ? TurnKind::infeasible : TurnKind::plan;
  return turn;
}

std::string format_turn(const Turn& turn) {
  std::vector<std::string> lines = turn.preamble;
  switch (turn.kind) {
    case TurnKind::question:
      if (turn.question) lines.push_back(format_question(*turn.question));
      lines.insert(lines.end(), turn.trailer.begin(), turn.trailer.end());
      break;
    case TurnKind::plan:
    case TurnKind::infeasible:
      lines.push_back(format_plan(turn.plan));
      lines.insert(lines.end(), turn.trailer.begin(), turn.trailer.end());
      break;
    case TurnKind::malformed:
      break;
  }
  return join(lines, "\n");
}

std::vector<std::string> validate_plan(const std::vector<PlanStep>& plan, const SceneManifest& manifest,
                                       const PrimitiveSet& active) {
  std::vector<std::string> out;
  if (plan.empty()) out.push_back("plan is empty");
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto& s = plan[i];
    const auto where = "step " + std::to_string(i + 1) + ": ";
    if (!active.count(s.primitive)) out.push_back(where + "primitive '" + std::string(to_string(s.primitive)) + "' is not active");
    if (s.args.size() != arity(s.primitive))
      out.push_back(where + "'" + std::string(to_string(s.primitive)) + "' takes " + std::to_string(arity(s.primitive)) +
                    " object(s), got " + std::to_string(s.args.size()));
    for (char c : s.args)
      if (!manifest.find(c)) out.push_back(where + "unknown object letter '" + std::string(1, c) + "'");
    if (s.primitive == Primitive::done && i + 1 < plan.size()) out.push_back(where + "steps follow done");
  }
  if (!plan.empty() && plan.back().primitive != Primitive::done) out.push_back("non-terminated: plan does not end with done");
  return out;
}

// --- answers ------------------------------------------------------------------

std::string format_answer_line(char letter, const AnswerDistribution& dist, std::size_t k) {
  const auto ranked = dist.ranked();
  std::string out(1, letter);
  out += ":";
  for (std::size_t i = 0; i < ranked.size() && i < k; ++i) {
    out += i ? ", " : " ";
    out += ranked[i].answer + " (" + format_probability(ranked[i].probability) + ")";
  }
  return out;
}

std::string format_answer_lines(const std::vector<AnswerLine>& lines) {
  std::vector<std::string> out;
  for (const auto& l : lines) {
    std::string s(1, l.letter);
    s += ":";
    for (std::size_t i = 0; i < l.answers.size(); ++i) {
      s += i ? ", " : " ";
      s += l.answers[i].answer + " (" + format_probability(l.answers[i].probability) + ")";
    }
    out.push_back(std::move(s));
  }
  return join(out, "\n");
}

std::vector<AnswerLine> parse_answer_lines(std::string_view text) {
  static const std::regex line_re(R"(^([A-Z]):\s*(.*)$)");
  static const std::regex entry_re(R"(^\s*(.+?) \((\d+(?:\.\d+)?)\)\s*(?:,|$))");
  std::vector<AnswerLine> out;
  int n = 0;
  for (const auto& raw : split_lines(text)) {
    ++n;
    if (trim(raw).empty()) continue;
    std::smatch m;
    if (!std::regex_match(raw, m, line_re)) throw InvalidInput("answer line " + std::to_string(n) + ": expected 'L: answer (p), ...'");
    AnswerLine line{m[1].str()[0], {}};
    std::string rest = m[2].str();
    while (!trim(rest).empty()) {
      std::smatch e;
      if (!std::regex_search(rest, e, entry_re))
        throw InvalidInput("answer line " + std::to_string(n) + ": cannot parse '" + rest + "'");
      line.answers.push_back({e[1].str(), std::stod(e[2].str())});
      rest = e.suffix();
    }
    out.push_back(std::move(line));
  }
  return out;
}

std::string answer_questions(const Question& question, Oracle& oracle, const SceneManifest& manifest,
                             const AnswerOptions& options) {
  std::vector<char> letters = question.letters;
  std::sort(letters.begin(), letters.end());
  letters.erase(std::unique(letters.begin(), letters.end()), letters.end());
  std::vector<OracleRequest> requests;
  for (char c : letters) {
    const auto* d = manifest.find(c);
    if (!d) throw InvalidInput(std::string("unknown object letter '") + c + "'");
    requests.push_back({d->object_id, std::nullopt, question.text, {}});
  }
  std::vector<AnswerDistribution> answers(requests.size());
  if (options.concurrent && requests.size() > 1) {
    std::vector<std::future<AnswerDistribution>> futures;
    for (const auto& r : requests) futures.push_back(std::async(std::launch::async, [&oracle, &r] { return oracle.query(r); }));
    for (std::size_t i = 0; i < futures.size(); ++i) answers[i] = futures[i].get();
  } else {
    for (std::size_t i = 0; i < requests.size(); ++i) answers[i] = oracle.query(requests[i]);
  }
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < letters.size(); ++i)
    lines.push_back(format_answer_line(letters[i], options.renormalize ? answers[i].renormalized() : answers[i], options.k));
  return join(lines, "\n");
}

// --- prompts ------------------------------------------------------------------

std::string_view to_string(PromptVariant variant) {
  switch (variant) {
    case PromptVariant::interactive: return "interactive";
    case PromptVariant::no_vlm: return "no_vlm";
    case PromptVariant::side_tasks: return "side_tasks";
    case PromptVariant::into_tasks: return "into_tasks";
  }
  return "interactive";
}

PromptVariant parse_prompt_variant(std::string_view name) {
  for (auto v : {PromptVariant::interactive, PromptVariant::no_vlm, PromptVariant::side_tasks, PromptVariant::into_tasks})
    if (to_string(v) == name) return v;
  throw InvalidInput("unknown prompt variant '" + std::string(name) +
                     "' (expected interactive, no_vlm, side_tasks or into_tasks)");
}

const PrimitiveSet& primitives_for(PromptVariant variant) {
  switch (variant) {
    case PromptVariant::side_tasks: return side_primitives();
    case PromptVariant::into_tasks: return into_primitives();
    default: return pick_and_place_primitives();
  }
}

bool asks_questions(PromptVariant variant) { return variant != PromptVariant::no_vlm; }

std::string_view constraint_sentence(PromptVariant variant) {
  switch (variant) {
    case PromptVariant::side_tasks:
      return "In your plan, you may only use the following primitive: move X to the side (where X is an object). Do not "
             "move furniture.";
    case PromptVariant::into_tasks:
      return "In your plan, you may only use the following primitive: move X into Y (where X is an object and Y is a "
             "container). Do not move furniture.";
    default: return "";
  }
}

std::string assemble_prompt(PromptVariant variant, const SceneManifest& manifest, std::string_view instruction) {
  if (manifest.empty()) throw InvalidInput("cannot build a prompt for an empty scene");
  std::string text(shipped_file(variant == PromptVariant::no_vlm ? "prompts/no_vlm.txt" : "prompts/interactive.txt"));
  auto fill = [&](std::string_view slot, const std::string& value) {
    auto at = text.find(slot);
    if (at == std::string::npos) throw Error("shipped prompt lacks the slot " + std::string(slot));
    text.replace(at, slot.size(), value);
  };
  fill("[list of objects in the scene]", manifest.listing());
  fill("[instruction specified here]", std::string(instruction));
  if (auto extra = constraint_sentence(variant); !extra.empty()) text += "\n" + std::string(extra);
  return text;
}

// --- episodes -----------------------------------------------------------------

ScriptedChat::ScriptedChat(std::vector<std::string> replies, std::string model)
    : replies_(std::move(replies)), model_(std::move(model)) {}

std::string ScriptedChat::reply(const std::vector<ChatMessage>&) {
  if (next_ >= replies_.size()) throw TransportError("scripted chat has no more replies");
  return replies_[next_++];
}

std::string_view to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::plan: return "plan";
    case Outcome::infeasible: return "infeasible";
    case Outcome::non_terminating: return "non_terminating";
    case Outcome::malformed: return "malformed";
    case Outcome::error: return "error";
  }
  return "error";
}

Outcome parse_outcome(std::string_view text) {
  for (auto o : {Outcome::plan, Outcome::infeasible, Outcome::non_terminating, Outcome::malformed, Outcome::error})
    if (to_string(o) == text) return o;
  throw InvalidInput("unknown episode outcome '" + std::string(text) + "'");
}

Transcript run_episode(ChatBackend& policy, Oracle& oracle, const SceneManifest& manifest, std::string_view instruction,
                       const EpisodeOptions& options) {
  using Clock = std::chrono::steady_clock;
  auto ms_since = [](Clock::time_point t) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t).count();
  };
  Transcript t;
  t.instruction = std::string(instruction);
  t.variant = options.variant;
  t.limits = options.limits;
  t.manifest = manifest;
  t.policy_model = policy.model_id();
  t.oracle_model = asks_questions(options.variant) ? oracle.model_id() : "";
  t.messages.push_back({"user", assemble_prompt(options.variant, manifest, instruction)});
  t.timings_ms.push_back(0.0);
  const auto& active = primitives_for(options.variant);

  auto say = [&](std::string text, double ms) {
    t.messages.push_back({"user", std::move(text)});
    t.timings_ms.push_back(ms);
  };

  for (std::size_t turn_index = 0; turn_index < options.limits.max_turns; ++turn_index) {
    auto started = Clock::now();
    std::string text;
    try {
      text = policy.reply(t.messages);
    } catch (const std::exception& e) {
      t.outcome = Outcome::error;
      t.note = std::string("policy backend failed: ") + e.what();
      return t;
    }
    t.messages.push_back({"assistant", text});
    t.timings_ms.push_back(ms_since(started));

    auto turn = parse_turn(text, manifest, active);
    switch (turn.kind) {
      case TurnKind::plan:
      case TurnKind::infeasible:
        t.outcome = turn.kind == TurnKind::plan ? Outcome::plan : Outcome::infeasible;
        t.plan = turn.plan;
        t.violations = turn.violations;
        if (turn.kind == TurnKind::infeasible) t.note = turn.statement();
        return t;
      case TurnKind::malformed:
        t.outcome = Outcome::malformed;
        t.note = join(turn.diagnostics, "; ");
        return t;
      case TurnKind::question:
        break;
    }
    if (!asks_questions(options.variant)) {
      say("No questions can be answered for this task. Respond with a plan.", 0.0);
      continue;
    }
    if (!turn.unknown_letters.empty()) {
      say("Unknown object letter(s): " + join_letters(turn.unknown_letters) +
              ". Only use letters from the list of objects in the scene.",
          0.0);
      continue;
    }
    if (t.questions >= options.limits.max_questions) {
      t.outcome = Outcome::non_terminating;
      t.note = "question limit of " + std::to_string(options.limits.max_questions) + " reached";
      return t;
    }
    started = Clock::now();
    try {
      auto block = answer_questions(*turn.question, oracle, manifest, options.answers);
      ++t.questions;
      say("Answer:\n" + block, ms_since(started));
    } catch (const std::exception& e) {
      t.outcome = Outcome::error;
      t.note = std::string("oracle failed: ") + e.what();
      return t;
    }
  }
  t.outcome = Outcome::non_terminating;
  t.note = "turn limit of " + std::to_string(options.limits.max_turns) + " reached";
  return t;
}

std::string transcript_to_jsonl(const Transcript& t, bool include_timing) {
  using detail::json;
  json manifest = json::array();
  for (const auto& d : t.manifest.detections())
    manifest.push_back({{"letter", std::string(1, d.letter)}, {"category", d.category}, {"object_id", d.object_id}});
  json header{{"schema", "physground.transcript"},
              {"version", 1},
              {"instruction", t.instruction},
              {"variant", to_string(t.variant)},
              {"max_turns", t.limits.max_turns},
              {"max_questions", t.limits.max_questions},
              {"image_ref", t.manifest.image_ref()},
              {"manifest", manifest},
              {"policy_model", t.policy_model},
              {"oracle_model", t.oracle_model}};
  std::string out = header.dump() + "\n";
  for (std::size_t i = 0; i < t.messages.size(); ++i) {
    json m{{"role", t.messages[i].role}, {"content", t.messages[i].content}};
    if (include_timing && i < t.timings_ms.size()) m["ms"] = t.timings_ms[i];
    out += m.dump() + "\n";
  }
  json plan = json::array();
  for (const auto& s : t.plan) plan.push_back(format_step(s));
  json end{{"outcome", to_string(t.outcome)},
           {"questions", t.questions},
           {"plan", plan},
           {"violations", t.violations},
           {"note", t.note}};
  out += end.dump() + "\n";
  return out;
}

Transcript transcript_from_jsonl(std::string_view text, std::string_view source) {
  using detail::json;
  Transcript t;
  const auto lines = split_lines(text);
  auto fail = [&](std::size_t line, const std::string& what) -> void {
    fail_at(std::string(source), static_cast<int>(line), what);
  };
  std::vector<json> records;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    try {
      records.push_back(json::parse(lines[i]));
    } catch (const json::parse_error& e) {
      fail(i + 1, std::string("invalid JSON: ") + e.what());
    }
  }
  if (records.size() < 2) fail(1, "transcript needs a header and an outcome line");
  try {
    const auto& h = records.front();
    if (h.value("schema", "") != "physground.transcript") fail(1, "not a transcript");
    t.instruction = h.at("instruction").get<std::string>();
    t.variant = parse_prompt_variant(h.at("variant").get<std::string>());
    t.limits.max_turns = h.value("max_turns", EpisodeLimits{}.max_turns);
    t.limits.max_questions = h.value("max_questions", EpisodeLimits{}.max_questions);
    std::vector<Detection> detections;
    for (const auto& d : h.at("manifest"))
      detections.push_back({d.at("letter").get<std::string>().at(0), d.at("category").get<std::string>(),
                            d.value("object_id", "")});
    t.manifest = SceneManifest(std::move(detections), h.value("image_ref", ""));
    t.policy_model = h.value("policy_model", "");
    t.oracle_model = h.value("oracle_model", "");
    for (std::size_t i = 1; i + 1 < records.size(); ++i) {
      t.messages.push_back({records[i].at("role").get<std::string>(), records[i].at("content").get<std::string>()});
      t.timings_ms.push_back(records[i].value("ms", 0.0));
    }
    const auto& end = records.back();
    t.outcome = parse_outcome(end.at("outcome").get<std::string>());
    t.questions = end.value("questions", std::size_t{0});
    for (const auto& s : end.at("plan")) {
      auto parsed = parse_turn("Plan:\n1. " + s.get<std::string>(), t.manifest, primitives_for(t.variant));
      if (parsed.plan.size() != 1) fail(lines.size(), "unreadable plan step '" + s.get<std::string>() + "'");
      t.plan.push_back(parsed.plan[0]);
    }
    t.violations = end.value("violations", std::vector<std::string>{});
    t.note = end.value("note", "");
  } catch (const json::exception& e) {
    fail(1, e.what());
  }
  return t;
}

Transcript replay(const Transcript& t) {
  std::vector<std::string> replies;
  std::vector<ScriptedOracle::Entry> entries;
  std::optional<Question> pending;
  for (const auto& m : t.messages) {
    if (m.role == "assistant") {
      replies.push_back(m.content);
      auto turn = parse_turn(m.content, t.manifest, primitives_for(t.variant));
      pending = turn.kind == TurnKind::question ? turn.question : std::nullopt;
      continue;
    }
    constexpr std::string_view prefix = "Answer:\n";
    if (!pending || m.content.rfind(prefix, 0) != 0) continue;
    for (auto& line : parse_answer_lines(std::string_view(m.content).substr(prefix.size()))) {
      const auto* d = t.manifest.find(line.letter);
      if (!d) throw InvalidInput(std::string("transcript answers unknown letter '") + line.letter + "'");
      entries.push_back({d->object_id, pending->text, AnswerDistribution(std::move(line.answers), false)});
    }
    pending.reset();
  }
  ScriptedChat chat(std::move(replies), t.policy_model);
  ScriptedOracle oracle(std::move(entries), t.oracle_model.empty() ? "scripted" : t.oracle_model);
  EpisodeOptions options;
  options.variant = t.variant;
  options.limits = t.limits;
  options.answers.k = 1000;
  return run_episode(chat, oracle, t.manifest, t.instruction, options);
}

}  // namespace physground
