#include "physground/world.h"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>

#include "physground/concepts.h"
#include "physground/kvdoc.h"
#include "physground/records_io.h"
#include "physground/shipped_data.h"

namespace physground {

std::string to_string(const Location& location) {
  switch (location.place) {
    case Place::table: return "table";
    case Place::side: return "side";
    case Place::inside: return "inside " + location.container;
    case Place::with_human: return "with_human";
    case Place::held: return "held";
  }
  return "table";
}

// --- state --------------------------------------------------------------------

WorldState::WorldState(std::vector<WorldObject> objects) : objects_(std::move(objects)) {
  std::set<std::string> ids;
  std::set<char> letters;
  for (const auto& o : objects_) {
    if (o.id.empty()) throw InvalidInput("world object without an id");
    if (!ids.insert(o.id).second) throw InvalidInput("duplicate object id '" + o.id + "'");
    if (!letters.insert(o.letter).second) throw InvalidInput(std::string("duplicate object letter '") + o.letter + "'");
    if (o.location.place == Place::held) throw InvalidInput("object '" + o.id + "' cannot start in the robot's hand");
  }
  for (std::size_t i = 0; i < objects_.size(); ++i) {
    const auto& loc = objects_[i].location;
    if (loc.place != Place::inside) continue;
    const auto* c = find(loc.container);
    if (!c) throw InvalidInput("object '" + objects_[i].id + "' is inside unknown object '" + loc.container + "'");
    if (!c->properties.container) throw InvalidInput("object '" + objects_[i].id + "' is inside non-container '" + c->id + "'");
    if (contains_transitively(i, index_of(c->id))) throw InvalidInput("containment cycle through '" + objects_[i].id + "'");
  }
  for (const auto& o : objects_) origin_.push_back(o.location);
}

const WorldObject* WorldState::find(std::string_view id) const {
  for (const auto& o : objects_)
    if (o.id == id) return &o;
  return nullptr;
}

const WorldObject* WorldState::by_letter(char letter) const {
  for (const auto& o : objects_)
    if (o.letter == letter) return &o;
  return nullptr;
}

std::size_t WorldState::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < objects_.size(); ++i)
    if (objects_[i].id == id) return i;
  throw NotFound("no object '" + std::string(id) + "' in the world");
}

// True when `inner` sits (possibly nested) inside `outer`, or they are the same.
bool WorldState::contains_transitively(std::size_t outer, std::size_t inner) const {
  std::size_t at = inner;
  for (std::size_t hops = 0; hops <= objects_.size(); ++hops) {
    if (at == outer) return true;
    const auto& loc = objects_[at].location;
    if (loc.place != Place::inside) return false;
    at = index_of(loc.container);
  }
  return true;  // already cyclic
}

WorldState WorldState::execute(const PlanStep& step) const {
  if (finished_) throw ExecutionError("plan continues after done");
  if (step.args.size() != arity(step.primitive))
    throw ExecutionError("'" + std::string(to_string(step.primitive)) + "' takes " + std::to_string(arity(step.primitive)) +
                         " object(s)");
  WorldState next = *this;
  std::vector<std::size_t> idx;
  for (char c : step.args) {
    const auto* o = by_letter(c);
    if (!o) throw ExecutionError(std::string("unknown object letter '") + c + "'");
    idx.push_back(index_of(o->id));
  }
  auto obj = [&](std::size_t k) -> WorldObject& { return next.objects_[idx[k]]; };
  auto require_movable = [&](std::size_t k) {
    if (!obj(k).movable()) throw ExecutionError("immovable: " + std::string(1, obj(k).letter) + " (" + obj(k).category + ") is furniture");
  };
  auto require_held = [&](std::size_t k) {
    if (held_ != obj(k).id) throw ExecutionError(std::string("robot is not holding ") + obj(k).letter);
  };
  switch (step.primitive) {
    case Primitive::go_to:
      next.robot_at_ = obj(0).id;
      break;
    case Primitive::pick_up:
      require_movable(0);
      if (held_) throw ExecutionError("robot is already holding " + std::string(1, find(*held_)->letter));
      if (robot_at_ != obj(0).id) throw ExecutionError(std::string("robot is not at ") + obj(0).letter);
      obj(0).location = {Place::held, {}};
      next.held_ = obj(0).id;
      break;
    case Primitive::bring_to_human:
      require_held(0);
      obj(0).location = {Place::with_human, {}};
      next.held_.reset();
      next.robot_at_.reset();
      break;
    case Primitive::put_down:
      require_held(0);
      obj(0).location = {Place::table, {}};
      next.held_.reset();
      break;
    case Primitive::move_to_side:
      require_movable(0);
      if (held_ && *held_ != obj(0).id) throw ExecutionError("robot is holding another object");
      obj(0).location = {Place::side, {}};
      if (held_) next.held_.reset();
      break;
    case Primitive::move_into:
      require_movable(0);
      if (idx[0] == idx[1]) throw ExecutionError(std::string("cannot move ") + obj(0).letter + " into itself");
      if (!obj(1).properties.container)
        throw ExecutionError(std::string(1, obj(1).letter) + " (" + obj(1).category + ") is not a container");
      if (contains_transitively(idx[0], idx[1]))
        throw ExecutionError(std::string(1, obj(1).letter) + " is inside " + std::string(1, obj(0).letter));
      if (held_ && *held_ != obj(0).id) throw ExecutionError("robot is holding another object");
      obj(0).location = {Place::inside, obj(1).id};
      if (held_) next.held_.reset();
      break;
    case Primitive::done:
      next.finished_ = true;
      break;
  }
  next.history_.push_back(step);
  return next;
}

GroundTruth WorldState::ground_truth() const {
  GroundTruth out;
  for (const auto& o : objects_) out[o.id] = o.properties;
  return out;
}

SceneManifest WorldState::manifest(std::string image_ref) const {
  std::vector<Detection> d;
  for (const auto& o : objects_) d.push_back({o.letter, o.category, o.id});
  return SceneManifest(std::move(d), std::move(image_ref));
}

ExecutionResult execute_plan(const WorldState& start, const std::vector<PlanStep>& plan) {
  ExecutionResult r{start, 0, std::nullopt};
  for (const auto& step : plan) {
    try {
      r.state = r.state.execute(step);
    } catch (const ExecutionError& e) {
      r.error = "step " + std::to_string(r.executed + 1) + " (" + format_step(step) + "): " + e.what();
      return r;
    }
    ++r.executed;
  }
  return r;
}

// --- predicates ---------------------------------------------------------------

struct Predicate::Node {
  enum class Type {
    compare, count,
    set_union, set_diff, none, all, letters, where, top, bottom,
    side, human, table, moved, robot, at, inside,
    target_letter, argmax, argmin, the, any,
    cond_or, cond_and, cond_not, is_container, is_furniture, is_movable, label_eq, label_ne,
  };
  Type type = Type::none;
  std::string op;
  std::string concept_name;
  std::string label;
  long k = 0;
  std::vector<char> letter_list;
  std::vector<std::shared_ptr<const Node>> kids;
};

namespace {

using Node = Predicate::Node;
using NodePtr = std::shared_ptr<const Node>;
using T = Node::Type;

Node node(T type, std::vector<NodePtr> kids = {}) {
  Node n;
  n.type = type;
  n.kids = std::move(kids);
  return n;
}

Node letters_node(std::vector<char> letters) {
  Node n = node(T::letters);
  n.letter_list = std::move(letters);
  return n;
}

struct Token {
  enum Kind { word, letter, number, symbol, end } kind = end;
  std::string text;
  std::size_t column = 0;
};

std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    const std::size_t col = i + 1;
    if (std::islower(c) || c == '_') {
      std::size_t j = i;
      while (j < s.size() && (std::islower(static_cast<unsigned char>(s[j])) || s[j] == '_' ||
                              std::isdigit(static_cast<unsigned char>(s[j]))))
        ++j;
      out.push_back({Token::word, std::string(s.substr(i, j - i)), col});
      i = j;
    } else if (std::isupper(c)) {
      if (i + 1 < s.size() && std::isalnum(static_cast<unsigned char>(s[i + 1])))
        throw InvalidInput("predicate column " + std::to_string(col) + ": object letters are single capitals");
      out.push_back({Token::letter, std::string(1, s[i]), col});
      ++i;
    } else if (std::isdigit(c)) {
      std::size_t j = i;
      while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
      out.push_back({Token::number, std::string(s.substr(i, j - i)), col});
      i = j;
    } else {
      std::string two(s.substr(i, 2));
      if (two == "==" || two == "<=" || two == ">=" || two == "!=") {
        out.push_back({Token::symbol, two, col});
        i += 2;
      } else if (std::string_view("(){},+-=").find(static_cast<char>(c)) != std::string_view::npos) {
        out.push_back({Token::symbol, std::string(1, static_cast<char>(c)), col});
        ++i;
      } else {
        throw InvalidInput("predicate column " + std::to_string(col) + ": unexpected character '" + std::string(1, s[i]) + "'");
      }
    }
  }
  out.push_back({Token::end, "", s.size() + 1});
  return out;
}

class Parser {
 public:
  explicit Parser(std::string_view text) : tokens_(tokenize(text)) {}

  std::vector<std::pair<NodePtr, std::pair<std::size_t, std::size_t>>> clauses() {
    std::vector<std::pair<NodePtr, std::pair<std::size_t, std::size_t>>> out;
    for (;;) {
      const auto start = peek().column;
      auto c = clause();
      out.push_back({c, {start, peek().column}});
      if (accept_word("and")) continue;
      if (peek().kind != Token::end) fail("expected 'and' or end of predicate");
      return out;
    }
  }

 private:
  const Token& peek() const { return tokens_[pos_]; }
  const Token& take() { return tokens_[pos_ < tokens_.size() - 1 ? pos_++ : pos_]; }
  [[noreturn]] void fail(const std::string& what) const {
    throw InvalidInput("predicate column " + std::to_string(peek().column) + ": " + what +
                       (peek().kind == Token::end ? " (at end)" : " (at '" + peek().text + "')"));
  }
  bool accept_symbol(std::string_view s) {
    if (peek().kind == Token::symbol && peek().text == s) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect_symbol(std::string_view s) {
    if (!accept_symbol(s)) fail("expected '" + std::string(s) + "'");
  }
  bool accept_word(std::string_view w) {
    if (peek().kind == Token::word && peek().text == w) {
      ++pos_;
      return true;
    }
    return false;
  }
  std::string word() {
    if (peek().kind != Token::word) fail("expected a name");
    return take().text;
  }
  long number() {
    if (peek().kind != Token::number) fail("expected a number");
    return std::stol(take().text);
  }
  std::string op() {
    for (auto s : {"==", "<=", ">="})
      if (accept_symbol(s)) return s;
    fail("expected ==, <= or >=");
  }
  static NodePtr make(Node n) { return std::make_shared<const Node>(std::move(n)); }

  std::string continuous_concept() {
    auto name = word();
    const auto* spec = ConceptRegistry::shipped().find(name);
    if (!spec || spec->categorical()) {
      --pos_;
      fail("'" + name + "' is not a continuous concept");
    }
    return name;
  }

  NodePtr clause() {
    if (accept_word("count")) {
      expect_symbol("(");
      auto s = set();
      expect_symbol(")");
      Node n = node(T::count);
      n.op = op();
      n.k = number();
      n.kids = {s};
      return make(std::move(n));
    }
    auto lhs = set();
    Node n = node(T::compare);
    n.op = op();
    n.kids = {lhs, set()};
    return make(std::move(n));
  }

  NodePtr set() {
    auto lhs = term();
    for (;;) {
      if (accept_symbol("+")) {
        lhs = make(node(T::set_union, {lhs, term()}));
      } else if (accept_symbol("-")) {
        lhs = make(node(T::set_diff, {lhs, term()}));
      } else {
        return lhs;
      }
    }
  }

  NodePtr term() {
    if (accept_symbol("(")) {
      auto s = set();
      expect_symbol(")");
      return s;
    }
    if (accept_symbol("{")) {
      Node n = node(T::letters);
      if (!accept_symbol("}")) {
        do {
          if (peek().kind != Token::letter) fail("expected an object letter");
          n.letter_list.push_back(take().text[0]);
        } while (accept_symbol(","));
        expect_symbol("}");
      }
      return make(std::move(n));
    }
    const auto name = word();
    static const std::map<std::string, T> regions{{"side", T::side},   {"human", T::human}, {"table", T::table},
                                                  {"moved", T::moved}, {"robot", T::robot}, {"at", T::at}, {"none", T::none},
                                                  {"all", T::all}};
    if (auto it = regions.find(name); it != regions.end()) return make(node(it->second));
    if (name == "where") {
      expect_symbol("(");
      auto c = cond();
      expect_symbol(")");
      return make(node(T::where, {c}));
    }
    if (name == "top" || name == "bottom") {
      expect_symbol("(");
      Node n = node(name == "top" ? T::top : T::bottom);
      n.concept_name = continuous_concept();
      expect_symbol(",");
      n.k = number();
      if (accept_symbol(",")) n.kids = {set()};
      expect_symbol(")");
      return make(std::move(n));
    }
    if (name == "inside") {
      expect_symbol("(");
      auto t = target();
      expect_symbol(")");
      return make(node(T::inside, {t}));
    }
    --pos_;
    fail("expected a set");
  }

  NodePtr target() {
    if (peek().kind == Token::letter) {
      Node n = node(T::target_letter);
      n.letter_list = {take().text[0]};
      return make(std::move(n));
    }
    const auto name = word();
    expect_symbol("(");
    Node n;
    if (name == "argmax" || name == "argmin") {
      n.type = name == "argmax" ? T::argmax : T::argmin;
      n.concept_name = continuous_concept();
      expect_symbol(",");
      n.kids = {set()};
    } else if (name == "the" || name == "any") {
      n.type = name == "the" ? T::the : T::any;
      n.kids = {set()};
    } else {
      pos_ -= 2;
      fail("expected a letter, argmax, argmin, the or any");
    }
    expect_symbol(")");
    return make(std::move(n));
  }

  NodePtr cond() {
    auto lhs = conj();
    while (accept_word("or")) lhs = make(node(T::cond_or, {lhs, conj()}));
    return lhs;
  }
  NodePtr conj() {
    auto lhs = unary();
    while (accept_word("and")) lhs = make(node(T::cond_and, {lhs, unary()}));
    return lhs;
  }
  NodePtr unary() {
    if (accept_word("not")) return make(node(T::cond_not, {unary()}));
    if (accept_symbol("(")) {
      auto c = cond();
      expect_symbol(")");
      return c;
    }
    const auto name = word();
    if (name == "container") return make(node(T::is_container));
    if (name == "furniture") return make(node(T::is_furniture));
    if (name == "movable") return make(node(T::is_movable));
    const auto* spec = ConceptRegistry::shipped().find(name);
    if (!spec || !spec->categorical()) {
      --pos_;
      fail("'" + name + "' is not a categorical concept or a flag");
    }
    Node n;
    if (accept_symbol("=")) {
      n.type = T::label_eq;
    } else if (accept_symbol("!=")) {
      n.type = T::label_ne;
    } else {
      fail("expected = or !=");
    }
    n.concept_name = name;
    n.label = word();
    return make(std::move(n));
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

// Raised while evaluating, reported as the clause witness.
struct EvalProblem {
  std::string message;
};

using Indices = std::set<std::size_t>;

class Evaluator {
 public:
  explicit Evaluator(const WorldState& s) : s_(s) {}

  Indices set(const Node& n) const {
    Indices out;
    const auto& objs = s_.objects();
    auto collect = [&](auto pred) {
      for (std::size_t i = 0; i < objs.size(); ++i)
        if (pred(i)) out.insert(i);
      return out;
    };
    switch (n.type) {
      case T::set_union: {
        out = set(*n.kids[0]);
        auto b = set(*n.kids[1]);
        out.insert(b.begin(), b.end());
        return out;
      }
      case T::set_diff: {
        out = set(*n.kids[0]);
        for (auto i : set(*n.kids[1])) out.erase(i);
        return out;
      }
      case T::none: return out;
      case T::all: return collect([](std::size_t) { return true; });
      case T::letters:
        for (char c : n.letter_list) {
          const auto* o = s_.by_letter(c);
          if (!o) throw EvalProblem{std::string("no object with letter '") + c + "'"};
          out.insert(s_.index_of(o->id));
        }
        return out;
      case T::where: return collect([&](std::size_t i) { return cond(*n.kids[0], objs[i]); });
      case T::top:
      case T::bottom: {
        auto pool = n.kids.empty() ? set(node(T::all)) : set(*n.kids[0]);
        auto ranked = rank(n.concept_name, pool, n.type == T::top);
        for (std::size_t j = 0; j < ranked.size() && j < static_cast<std::size_t>(n.k); ++j) out.insert(ranked[j]);
        return out;
      }
      case T::side: return place(Place::side);
      case T::human: return place(Place::with_human);
      case T::table: return place(Place::table);
      case T::robot: return place(Place::held);
      case T::at:
        if (s_.robot_at()) out.insert(s_.index_of(*s_.robot_at()));
        return out;
      case T::moved: return collect([&](std::size_t i) { return s_.moved(i); });
      case T::inside: {
        auto targets = target(*n.kids[0]);
        return collect([&](std::size_t i) {
          const auto& loc = objs[i].location;
          return loc.place == Place::inside && targets.count(s_.index_of(loc.container)) > 0;
        });
      }
      default: throw EvalProblem{"internal: not a set expression"};
    }
  }

  std::string describe(const Indices& idx) const {
    if (idx.empty()) return "none";
    std::vector<std::string> parts;
    for (auto i : idx) {
      const auto& o = s_.objects()[i];
      parts.push_back(std::string(1, o.letter) + " (" + (o.name.empty() ? o.category : o.name) + ")");
    }
    return join(parts, ", ");
  }

 private:
  Indices place(Place p) const {
    Indices out;
    for (std::size_t i = 0; i < s_.objects().size(); ++i)
      if (s_.objects()[i].location.place == p) out.insert(i);
    return out;
  }

  std::vector<std::size_t> rank(const std::string& concept_name, const Indices& pool, bool descending) const {
    std::vector<std::pair<double, std::size_t>> v;
    for (auto i : pool) {
      const auto& props = s_.objects()[i].properties.continuous;
      auto it = props.find(concept_name);
      if (it == props.end())
        throw EvalProblem{std::string("object ") + s_.objects()[i].letter + " has no value for " + concept_name};
      v.push_back({descending ? -it->second : it->second, i});
    }
    std::sort(v.begin(), v.end());
    std::vector<std::size_t> out;
    for (const auto& p : v) out.push_back(p.second);
    return out;
  }

  Indices target(const Node& n) const {
    switch (n.type) {
      case T::target_letter: return set(letters_node(n.letter_list));
      case T::argmax:
      case T::argmin: {
        auto ranked = rank(n.concept_name, set(*n.kids[0]), n.type == T::argmax);
        if (ranked.empty()) throw EvalProblem{"argmax/argmin over an empty set"};
        return {ranked.front()};
      }
      case T::the: {
        auto s = set(*n.kids[0]);
        if (s.size() != 1) throw EvalProblem{"the(...) matched " + std::to_string(s.size()) + " objects: " + describe(s)};
        return s;
      }
      case T::any: return set(*n.kids[0]);
      default: throw EvalProblem{"internal: not a target"};
    }
  }

  bool cond(const Node& n, const WorldObject& o) const {
    switch (n.type) {
      case T::cond_or: return cond(*n.kids[0], o) || cond(*n.kids[1], o);
      case T::cond_and: return cond(*n.kids[0], o) && cond(*n.kids[1], o);
      case T::cond_not: return !cond(*n.kids[0], o);
      case T::is_container: return o.properties.container;
      case T::is_furniture: return o.properties.furniture;
      case T::is_movable: return o.movable();
      case T::label_eq:
      case T::label_ne: {
        auto it = o.properties.categorical.find(n.concept_name);
        const bool eq = it != o.properties.categorical.end() && it->second == n.label;
        return n.type == T::label_eq ? eq : !eq;
      }
      default: throw EvalProblem{"internal: not a condition"};
    }
  }

  const WorldState& s_;
};

}  // namespace

Predicate Predicate::parse(std::string_view text) {
  Predicate p;
  p.text_ = trim(text);
  if (p.text_.empty()) throw InvalidInput("empty predicate");
  Parser parser(p.text_);
  for (auto& [node, span] : parser.clauses()) {
    p.clauses_.push_back(node);
    const auto begin = span.first - 1;
    const auto end = std::min(span.second - 1, p.text_.size());
    p.clause_text_.push_back(trim(std::string_view(p.text_).substr(begin, end - begin)));
  }
  return p;
}

ScoreResult Predicate::evaluate(const WorldState& state) const {
  if (clauses_.empty()) return {false, "", "empty predicate"};
  Evaluator ev(state);
  for (std::size_t c = 0; c < clauses_.size(); ++c) {
    const auto& n = *clauses_[c];
    std::string witness;
    try {
      if (n.type == T::count) {
        const auto got = static_cast<long>(ev.set(*n.kids[0]).size());
        const bool ok = n.op == "==" ? got == n.k : n.op == "<=" ? got <= n.k : got >= n.k;
        if (!ok) witness = "count is " + std::to_string(got) + ": " + ev.describe(ev.set(*n.kids[0]));
      } else {
        const auto lhs = ev.set(*n.kids[0]);
        const auto rhs = ev.set(*n.kids[1]);
        Indices missing, extra;
        if (n.op != "<=")
          std::set_difference(rhs.begin(), rhs.end(), lhs.begin(), lhs.end(), std::inserter(missing, missing.end()));
        if (n.op != ">=")
          std::set_difference(lhs.begin(), lhs.end(), rhs.begin(), rhs.end(), std::inserter(extra, extra.end()));
        std::vector<std::string> parts;
        if (!missing.empty()) parts.push_back("missing " + ev.describe(missing));
        if (!extra.empty()) parts.push_back("unexpected " + ev.describe(extra));
        witness = join(parts, "; ");
      }
    } catch (const EvalProblem& p) {
      witness = p.message;
    }
    if (!witness.empty()) return {false, clause_text_[c], witness};
  }
  return {true, "", ""};
}

std::string_view to_string(TaskCategory category) {
  switch (category) {
    case TaskCategory::single_concept: return "single_concept";
    case TaskCategory::multi_concept: return "multi_concept";
    case TaskCategory::common_knowledge: return "common_knowledge";
  }
  return "single_concept";
}

TaskCategory parse_task_category(std::string_view text) {
  for (auto c : {TaskCategory::single_concept, TaskCategory::multi_concept, TaskCategory::common_knowledge})
    if (to_string(c) == text) return c;
  throw InvalidInput("unknown task category '" + std::string(text) + "'");
}

ScoreResult score_task(const WorldState& final_state, const TaskSpec& task) { return task.predicate.evaluate(final_state); }

// --- scenes -------------------------------------------------------------------

const TaskSpec& Scene::task(std::string_view id) const {
  for (const auto& t : tasks)
    if (t.id == id) return t;
  throw NotFound("scene '" + name + "' has no task '" + std::string(id) + "'");
}

namespace {

bool parse_bool(const std::string& source, const KvEntry& e) {
  const auto v = to_lower(e.value);
  if (v == "yes" || v == "true") return true;
  if (v == "no" || v == "false") return false;
  fail_at(source, e.line, "'" + e.key + "' must be yes or no");
}

}  // namespace

Scene build_scene(std::string_view text, std::string source) {
  const auto doc = parse_kv(text, source);
  doc.expect_schema("physground.scene", 1);
  const auto& registry = ConceptRegistry::shipped();
  Scene scene;
  scene.name = doc.root.get("name").value_or(source);
  scene.image_ref = doc.root.get("image").value_or("");

  struct Pending {
    WorldObject object;
    std::optional<std::string> inside;
    int line;
  };
  std::vector<Pending> pending;
  std::set<char> used;
  for (const auto* s : doc.all("object")) {
    Pending p{{}, std::nullopt, s->line};
    auto& o = p.object;
    o.id = s->argument;
    if (o.id.empty() || o.id.find(' ') != std::string::npos) fail_at(source, s->line, "object sections need a one-word id");
    bool container_set = false;
    o.letter = 0;
    for (const auto& e : s->entries) {
      if (e.key == "category") {
        o.category = e.value;
      } else if (e.key == "name") {
        o.name = e.value;
      } else if (e.key == "letter") {
        if (e.value.size() != 1 || e.value[0] < 'A' || e.value[0] > 'Z') fail_at(source, e.line, "letter must be A-Z");
        o.letter = e.value[0];
        if (!used.insert(o.letter).second) fail_at(source, e.line, "duplicate letter '" + e.value + "'");
      } else if (e.key == "furniture") {
        o.properties.furniture = parse_bool(source, e);
      } else if (e.key == "container") {
        o.properties.container = parse_bool(source, e);
        container_set = true;
      } else if (e.key == "location") {
        const auto v = trim(e.value);
        if (v == "table") {
          o.location = {Place::table, {}};
        } else if (v == "side") {
          o.location = {Place::side, {}};
        } else if (v.rfind("inside ", 0) == 0) {
          p.inside = trim(v.substr(7));
        } else {
          fail_at(source, e.line, "location must be table, side or 'inside <id>'");
        }
      } else if (const auto* spec = registry.find(e.key)) {
        if (spec->categorical()) {
          o.properties.categorical[e.key] = normalize_label(e.value);
        } else {
          try {
            std::size_t used_chars = 0;
            const double v = std::stod(e.value, &used_chars);
            if (used_chars != e.value.size()) throw std::invalid_argument("trailing");
            o.properties.continuous[e.key] = v;
          } catch (const std::exception&) {
            fail_at(source, e.line, "'" + e.key + "' needs a number");
          }
        }
      } else {
        fail_at(source, e.line, "unknown object key '" + e.key + "'");
      }
    }
    if (o.category.empty()) fail_at(source, s->line, "object '" + o.id + "' has no category");
    if (!container_set) o.properties.container = registry.is_container_category(o.category);
    pending.push_back(std::move(p));
  }
  if (pending.empty()) fail_at(source, 1, "scene has no objects");
  if (pending.size() > 26) fail_at(source, pending[26].line, "a scene holds at most 26 objects");
  char next = 'A';
  std::vector<WorldObject> objects;
  for (auto& p : pending) {
    if (!p.object.letter) {
      while (used.count(next)) ++next;
      p.object.letter = next;
      used.insert(next);
    }
    if (p.inside) p.object.location = {Place::inside, *p.inside};
    objects.push_back(p.object);
  }
  try {
    scene.world = WorldState(std::move(objects));
  } catch (const InvalidInput& e) {
    fail_at(source, pending.front().line, e.what());
  }
  scene.manifest = scene.world.manifest(scene.image_ref);

  std::set<std::string> task_ids;
  for (const auto* s : doc.all("task")) {
    TaskSpec t;
    t.id = s->argument;
    if (t.id.empty()) fail_at(source, s->line, "task sections need an id");
    if (!task_ids.insert(t.id).second) fail_at(source, s->line, "duplicate task '" + t.id + "'");
    t.instruction = s->require("instruction").value;
    const auto& category = s->require("category");
    try {
      t.category = parse_task_category(category.value);
    } catch (const InvalidInput& e) {
      fail_at(source, category.line, e.what());
    }
    if (const auto* v = s->find("variant")) {
      try {
        t.variant = parse_prompt_variant(v->value);
      } catch (const InvalidInput& e) {
        fail_at(source, v->line, e.what());
      }
    }
    const auto& pred = s->require("predicate");
    try {
      t.predicate = Predicate::parse(pred.value);
    } catch (const InvalidInput& e) {
      fail_at(source, pred.line, e.what());
    }
    t.ambiguous = s->get_bool("ambiguous", false);
    t.note = s->get("note").value_or("");
    for (const auto& e : s->entries)
      if (e.key != "instruction" && e.key != "category" && e.key != "variant" && e.key != "predicate" &&
          e.key != "ambiguous" && e.key != "note")
        fail_at(source, e.line, "unknown task key '" + e.key + "'");
    scene.tasks.push_back(std::move(t));
  }
  return scene;
}

Scene load_scene(const std::string& path) {
  return build_scene(read_text_file(path), path);
}

Scene shipped_scene(std::string_view name) {
  const auto file = "scenes/" + std::string(name) + ".scene";
  return build_scene(shipped_file(file), file);
}

std::vector<std::string> shipped_scene_names() {
  std::vector<std::string> out;
  for (auto f : shipped_file_names()) {
    constexpr std::string_view dir = "scenes/", ext = ".scene";
    if (f.substr(0, dir.size()) == dir && f.size() > dir.size() + ext.size() && f.substr(f.size() - ext.size()) == ext)
      out.emplace_back(f.substr(dir.size(), f.size() - dir.size() - ext.size()));
  }
  return out;
}

EpisodeScore score_episode(const Scene& scene, const TaskSpec& task, const Transcript& transcript, bool violations_fail) {
  if (!transcript.terminated())
    return {false, "episode ended as " + std::string(to_string(transcript.outcome)) +
                       (transcript.note.empty() ? "" : ": " + transcript.note)};
  if (violations_fail && !transcript.violations.empty())
    return {false, "plan violations: " + join(transcript.violations, "; ")};
  const auto run = execute_plan(scene.world, transcript.plan);
  if (run.error) return {false, "execution failed at " + *run.error};
  const auto score = score_task(run.state, task);
  if (score.success) return {true, ""};
  return {false, score.failed_clause + ": " + score.witness};
}

}  // namespace physground
