#include "physground/policy.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <regex>

#include "physground/errors.h"
#include "physground/kvdoc.h"

namespace physground {

namespace {

using Quantity = Selector::Quantity;

std::string question_for_label(const std::string& concept_name, const std::string& label, bool negated) {
  if (concept_name == "material") return negated ? "Is this object not " + label + "?" : "Is this object made of " + label + "?";
  if (concept_name == "transparency") return std::string("Is this object ") + (negated ? "not " : "") + label + "?";
  if (concept_name == "can_contain_liquid") return "Can this object be used to carry water?";
  if (concept_name == "is_sealed") return "Is this object sealed?";
  if (concept_name == "contents") return label == "nothing" ? "Is this object empty?" : "Does this object contain " + label + "?";
  return "Is this object " + label + "?";
}

Requirement label_req(std::string concept_name, std::string label, bool negated = false, bool want_yes = true) {
  Requirement r;
  r.kind = Requirement::Kind::label;
  r.question = question_for_label(concept_name, label, negated);
  r.concept_name = std::move(concept_name);
  r.label = std::move(label);
  r.negated = negated;
  r.want_yes = want_yes;
  return r;
}

Requirement container_req(bool want_yes) {
  Requirement r;
  r.kind = Requirement::Kind::container;
  r.want_yes = want_yes;
  r.question = "Is this object a container?";
  return r;
}

Superlative superlative(std::string concept_name, bool maximize) {
  static const std::map<std::string, std::string> questions{{"mass", "Is this object heavy?"},
                                                            {"fragility", "Is this object fragile?"},
                                                            {"deformability", "Is this object deformable?"}};
  return {concept_name, maximize, questions.at(concept_name)};
}

std::string material_word(const std::string& w) { return w == "wooden" ? "wood" : w; }

// Removes the first match of `re` from `text`; returns the match groups.
std::optional<std::vector<std::string>> take(std::string& text, const std::regex& re) {
  std::smatch m;
  if (!std::regex_search(text, m, re)) return std::nullopt;
  std::vector<std::string> groups;
  for (const auto& g : m) groups.push_back(g.str());
  text = m.prefix().str() + " " + m.suffix().str();
  return groups;
}

Selector parse_phrase(std::string phrase) {
  Selector s;
  phrase = " " + to_lower(phrase) + " ";
  bool recognized = false;
  auto has = [&](const char* pattern) { return std::regex_search(phrase, std::regex(pattern)); };

  if (has(R"(^\s*all\b)") || has(R"(\bthe ones\b)")) s.quantity = Quantity::all;
  if (auto m = take(phrase, std::regex(R"(\bthe (two|three|four|five) )"))) {
    static const std::map<std::string, std::size_t> n{{"two", 2}, {"three", 3}, {"four", 4}, {"five", 5}};
    s.quantity = Quantity::count;
    s.count = n.at((*m)[1]);
  }

  struct Sup {
    const char* pattern;
    const char* concept_name;
    bool maximize;
  };
  static const Sup sups[] = {
      {R"(\b(heaviest|heavier|most mass)\b)", "mass", true},
      {R"(\b(lightest|lighter|least mass)\b)", "mass", false},
      {R"(\bmost fragile\b)", "fragility", true},
      {R"(\b(least fragile|sturdiest)\b)", "fragility", false},
      {R"(\b(most deformable|most bendable|most flexible|softest)\b)", "deformability", true},
      {R"(\b(least deformable|most rigid|stiffest)\b)", "deformability", false},
  };
  for (const auto& sp : sups)
    if (take(phrase, std::regex(sp.pattern))) {
      s.superlative = superlative(sp.concept_name, sp.maximize);
      recognized = true;
      break;
    }

  std::optional<Requirement> certain;
  if (auto m = take(phrase, std::regex(R"(\b(?:most likely to be|most certain is|confident is) (plastic|metal|glass|wooden|wood|ceramic|paper)\b)"))) {
    certain = label_req("material", material_word((*m)[1]));
    s.by_certainty = true;
  }

  std::vector<Requirement> reqs;
  bool container = false;
  if (take(phrase, std::regex(R"(\bnot a container\b)"))) {
    reqs.push_back(container_req(false));
    container = true;
  }
  if (auto m = take(phrase, std::regex(R"(\bnot (plastic|metal|glass|wooden|wood|ceramic|paper)\b)")))
    reqs.push_back(label_req("material", material_word((*m)[1]), true));
  if (take(phrase, std::regex(R"(\bcannot be used to (?:carry|hold) (?:water|liquids?)\b)")))
    reqs.push_back(label_req("can_contain_liquid", "yes", false, false));
  if (take(phrase, std::regex(R"(\b(?:can be used to carry water|can hold water|can be filled with water|(?:use|used) to (?:contain|hold|carry) liquids?|can (?:contain|hold) liquids?|carry water)\b)")))
    reqs.push_back(label_req("can_contain_liquid", "yes"));
  if (take(phrase, std::regex(R"(\bempty\b)"))) reqs.push_back(label_req("contents", "nothing"));
  if (auto m = take(phrase, std::regex(R"(\b(?:have|has|with|of|containing|contains) (?:some )?(water|olive oil|oil|juice|metals?|sunscreen|food|soap)\b)"))) {
    auto label = (*m)[1];
    if (label == "olive oil") label = "oil";
    if (label == "metals") label = "metal";
    reqs.push_back(label_req("contents", label));
  }
  if (take(phrase, std::regex(R"(\b(?:sealed|with a lid)\b)"))) reqs.push_back(label_req("is_sealed", "yes"));
  while (auto m = take(phrase, std::regex(R"(\b(plastic|metal|glass|wooden|wood|ceramic|paper)\b)")))
    reqs.push_back(label_req("material", material_word((*m)[1])));
  if (take(phrase, std::regex(R"(\btranslucent\b)"))) reqs.push_back(label_req("transparency", "translucent"));
  if (take(phrase, std::regex(R"(\b(?:transparent|clear|see-through)\b)"))) reqs.push_back(label_req("transparency", "transparent"));
  if (take(phrase, std::regex(R"(\bopaque\b)"))) reqs.push_back(label_req("transparency", "opaque"));
  if (!container && take(phrase, std::regex(R"(\b(?:containers?|cups?|mugs?)\b)"))) {
    reqs.insert(reqs.begin(), container_req(true));
    container = true;
  }
  if (take(phrase, std::regex(R"(\b(?:pieces? of )?furniture\b)"))) {
    Requirement r;
    r.kind = Requirement::Kind::furniture;
    r.question = "Is this object furniture?";
    reqs.push_back(r);
    s.include_furniture = true;
  }
  if (auto m = take(phrase, std::regex(R"(\b(?:piece of )?(clothing|tables?)\b)"))) {
    auto word = (*m)[1];
    if (word == "tables") word = "table";
    s.category_words.push_back(word);
    if (word == "table") s.include_furniture = true;
    recognized = true;
  }
  if (certain) {
    reqs.erase(std::remove(reqs.begin(), reqs.end(), *certain), reqs.end());
    reqs.push_back(*certain);
  }
  if (!reqs.empty()) recognized = true;
  if (has(R"(\b(objects?|ones?|things?)\b)")) recognized = true;
  if (!recognized) throw InvalidInput("cannot read the object description '" + trim(phrase) + "'");
  s.requirements = std::move(reqs);
  return s;
}

struct YesNo {
  double yes = 0;
  double no = 0;
};

double ratio(const YesNo& a) {
  if (a.no > 0) return a.yes / a.no;
  return a.yes > 0 ? std::numeric_limits<double>::infinity() : 1.0;
}

bool satisfied(const Requirement& r, const YesNo& a) { return r.want_yes ? a.yes > a.no : a.no > a.yes; }
double certainty(const Requirement& r, const YesNo& a) { return r.want_yes ? a.yes : a.no; }

// Answers a question about a letter, or nullopt when it still has to be asked.
using Lookup = std::function<std::optional<YesNo>(const std::string& question, char letter, const Requirement* req,
                                                  const Superlative* sup)>;

struct Selection {
  std::optional<Question> ask;
  std::vector<char> chosen;
};

Selection select(const Selector& s, std::vector<char> candidates, const Lookup& lookup) {
  Selection out;
  auto ask_missing = [&](const std::string& question, const Requirement* req, const Superlative* sup) {
    std::vector<char> missing;
    for (char c : candidates)
      if (!lookup(question, c, req, sup)) missing.push_back(c);
    if (!missing.empty()) out.ask = Question{missing, question, ""};
    return !missing.empty();
  };
  for (const auto& r : s.requirements) {
    if (candidates.empty()) break;
    if (ask_missing(r.question, &r, nullptr)) return out;
    std::vector<char> kept;
    for (char c : candidates)
      if (satisfied(r, *lookup(r.question, c, &r, nullptr))) kept.push_back(c);
    candidates = std::move(kept);
  }
  if (candidates.empty()) return out;

  std::vector<std::pair<double, char>> ranked;
  if (s.superlative) {
    const auto& sup = *s.superlative;
    if (ask_missing(sup.question, nullptr, &sup)) return out;
    for (char c : candidates) {
      const double r = ratio(*lookup(sup.question, c, nullptr, &sup));
      ranked.push_back({sup.maximize ? -r : r, c});
    }
  } else if (!s.requirements.empty() && s.quantity != Quantity::all) {
    const auto& last = s.requirements.back();
    for (char c : candidates) ranked.push_back({-certainty(last, *lookup(last.question, c, &last, nullptr)), c});
  } else {
    for (char c : candidates) ranked.push_back({0.0, c});
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::size_t want = s.quantity == Quantity::all ? ranked.size() : s.quantity == Quantity::count ? s.count : 1;
  if (s.quantity == Quantity::all && s.superlative) want = 1;
  for (std::size_t i = 0; i < ranked.size() && i < want; ++i) out.chosen.push_back(ranked[i].second);
  std::sort(out.chosen.begin(), out.chosen.end());
  return out;
}

struct PromptView {
  SceneManifest manifest;
  std::string instruction;
  bool interactive = false;
  const PrimitiveSet* primitives = &pick_and_place_primitives();
};

PromptView read_prompt(const std::vector<ChatMessage>& conversation) {
  if (conversation.empty()) throw InvalidInput("empty conversation");
  const auto& prompt = conversation.front().content;
  PromptView v;
  std::string listing;
  static constexpr std::string_view kObjects = "The following objects are in the scene: ";
  static constexpr std::string_view kInstruction = "Instruction: ";
  std::size_t start = 0;
  while (start < prompt.size()) {
    auto end = prompt.find('\n', start);
    if (end == std::string::npos) end = prompt.size();
    std::string_view line(prompt.data() + start, end - start);
    if (line.substr(0, kObjects.size()) == kObjects) listing = line.substr(kObjects.size());
    if (line.substr(0, kInstruction.size()) == kInstruction) v.instruction = line.substr(kInstruction.size());
    start = end + 1;
  }
  if (listing.empty()) throw InvalidInput("prompt has no object list");
  v.manifest = SceneManifest::parse_listing(listing);
  v.interactive = prompt.find("Question about object [A, B]") != std::string::npos;
  if (prompt.find(constraint_sentence(PromptVariant::side_tasks)) != std::string::npos) v.primitives = &side_primitives();
  if (prompt.find(constraint_sentence(PromptVariant::into_tasks)) != std::string::npos) v.primitives = &into_primitives();
  return v;
}

std::string infeasible_reply(const std::string& why) { return why + "\nPlan:\n1. Done"; }

std::vector<char> candidate_letters(const SceneManifest& m, const Selector& s, std::optional<char> exclude) {
  std::vector<char> out;
  for (const auto& d : m.detections()) {
    if (exclude && d.letter == *exclude) continue;
    if (!s.include_furniture && is_furniture_category(d.category)) continue;
    if (!s.category_words.empty()) {
      const auto cat = to_lower(d.category);
      bool hit = false;
      for (const auto& w : s.category_words) hit = hit || cat.find(w) != std::string::npos;
      if (!hit) continue;
    }
    out.push_back(d.letter);
  }
  return out;
}

// Shared decision procedure; `lookup` decides whether questions are needed.
std::string decide(const PromptView& view, const Lookup& lookup) {
  Intent intent;
  try {
    intent = parse_instruction(view.instruction);
  } catch (const InvalidInput&) {
    return infeasible_reply("I cannot determine which objects the instruction refers to, so I cannot complete the task.");
  }
  std::optional<char> target;
  if (intent.action == TaskAction::into) {
    auto t = select(*intent.target, candidate_letters(view.manifest, *intent.target, std::nullopt), lookup);
    if (t.ask) return format_question(*t.ask);
    if (t.chosen.empty()) return infeasible_reply("There is no suitable container in the scene, so the task cannot be completed.");
    target = t.chosen.front();
  }
  auto src = select(intent.sources, candidate_letters(view.manifest, intent.sources, target), lookup);
  if (src.ask) return format_question(*src.ask);
  if (src.chosen.empty()) return infeasible_reply("No object in the scene matches the instruction, so the task cannot be completed.");

  std::vector<PlanStep> plan;
  for (char c : src.chosen) {
    switch (intent.action) {
      case TaskAction::bring:
        plan.push_back({Primitive::go_to, {c}});
        plan.push_back({Primitive::pick_up, {c}});
        plan.push_back({Primitive::bring_to_human, {c}});
        break;
      case TaskAction::side:
        plan.push_back({Primitive::move_to_side, {c}});
        break;
      case TaskAction::into:
        plan.push_back({Primitive::move_into, {c, *target}});
        break;
      case TaskAction::go:
        plan.push_back({Primitive::go_to, {c}});
        break;
    }
    if (intent.action == TaskAction::go) break;
  }
  plan.push_back({Primitive::done, {}});
  return format_plan(plan);
}

}  // namespace

bool is_furniture_category(std::string_view category) {
  static const std::set<std::string> furniture{
      "countertop", "desk",    "table",      "coffee table", "chair",           "couch",      "sofa",
      "stool",      "cupboard", "cabinetry",  "dishwasher",   "sink",            "door",       "window",
      "whiteboard", "bed",      "bookcase",   "shelf",        "chest of drawers", "nightstand", "refrigerator",
      "light switch"};
  return furniture.count(to_lower(trim(category))) > 0;
}

Intent parse_instruction(std::string_view instruction) {
  auto text = to_lower(trim(instruction));
  std::vector<std::string> sentences;
  {
    static const std::regex split(R"(\.(\s+|$))");
    std::sregex_token_iterator it(text.begin(), text.end(), split, -1), end;
    for (; it != end; ++it)
      if (auto s = trim(it->str()); !s.empty()) sentences.push_back(s);
  }
  static const std::regex side_re(R"(^(?:move|put|place) (.+) (?:to|on) the side$)");
  static const std::regex into_re(R"(^(?:move|put|place) (.+?) into (.+)$)");
  static const std::regex among_re(R"(^among all (.+?), (bring me|go to) the (ones?) (?:that|which) (.+)$)");
  static const std::regex bring_re(R"(^bring me (.+)$)");
  static const std::regex go_re(R"(^go to (.+)$)");
  static const std::regex find_re(R"(^find (.+)$)");
  static const std::regex choose_re(R"(^choose (.+)$)");

  std::optional<Selector> found;
  std::optional<Intent> intent;
  std::optional<std::string> choose;
  for (const auto& s : sentences) {
    std::smatch m;
    if (std::regex_match(s, m, find_re)) {
      found = parse_phrase(m[1].str());
    } else if (std::regex_match(s, m, choose_re)) {
      choose = m[1].str();
    } else if (intent) {
      continue;
    } else if (std::regex_match(s, m, side_re)) {
      intent = Intent{TaskAction::side, parse_phrase(m[1].str()), std::nullopt};
    } else if (std::regex_match(s, m, into_re)) {
      Intent i{TaskAction::into, parse_phrase(m[1].str()), std::nullopt};
      const auto t = trim(m[2].str());
      if ((t == "that container" || t == "it") && found) {
        i.target = *found;
      } else {
        i.target = parse_phrase(t);
      }
      intent = std::move(i);
    } else if (std::regex_match(s, m, among_re)) {
      auto sel = parse_phrase(m[1].str() + " that " + m[4].str());
      sel.quantity = m[3].str() == "ones" ? Quantity::all : Quantity::one;
      intent = Intent{m[2].str() == "go to" ? TaskAction::go : TaskAction::bring, sel, std::nullopt};
    } else if (std::regex_match(s, m, bring_re)) {
      intent = Intent{TaskAction::bring, parse_phrase(m[1].str()), std::nullopt};
    } else if (std::regex_match(s, m, go_re)) {
      intent = Intent{TaskAction::go, parse_phrase(m[1].str()), std::nullopt};
    }
  }
  if (!intent) throw InvalidInput("unsupported instruction '" + std::string(instruction) + "'");
  if (choose) {
    auto extra = parse_phrase(*choose);
    auto& sel = intent->target ? *intent->target : intent->sources;
    if (extra.by_certainty && !extra.requirements.empty()) {
      const auto last = extra.requirements.back();
      sel.requirements.erase(std::remove(sel.requirements.begin(), sel.requirements.end(), last), sel.requirements.end());
      sel.requirements.push_back(last);
      sel.by_certainty = true;
    }
  }
  return *intent;
}

std::string RulePolicy::reply(const std::vector<ChatMessage>& conversation) {
  const auto view = read_prompt(conversation);
  if (!view.interactive) return PriorPolicy().reply(conversation);

  // question text -> letter -> (p(yes), p(no)) as printed in answer blocks
  std::map<std::string, std::map<char, YesNo>> known;
  for (std::size_t i = 1; i + 1 < conversation.size(); ++i) {
    if (conversation[i].role != "assistant") continue;
    const auto turn = parse_turn(conversation[i].content, view.manifest, *view.primitives);
    const auto& next = conversation[i + 1].content;
    if (turn.kind != TurnKind::question || next.rfind("Answer:\n", 0) != 0) continue;
    for (const auto& line : parse_answer_lines(std::string_view(next).substr(8))) {
      YesNo yn;
      for (const auto& e : line.answers) {
        const auto a = to_lower(e.answer);
        if (a == "yes") yn.yes = e.probability;
        if (a == "no") yn.no = e.probability;
      }
      known[turn.question->text][line.letter] = yn;
    }
  }
  return decide(view, [&](const std::string& q, char letter, const Requirement*, const Superlative*) -> std::optional<YesNo> {
    auto it = known.find(q);
    if (it == known.end()) return std::nullopt;
    auto jt = it->second.find(letter);
    if (jt == it->second.end()) return std::nullopt;
    return jt->second;
  });
}

PriorPolicy::PriorPolicy(const TierTable& tiers, const CategoryLabelTable& labels, const ConceptRegistry& registry)
    : tiers_(&tiers), labels_(&labels), registry_(&registry) {}

std::string PriorPolicy::reply(const std::vector<ChatMessage>& conversation) {
  const auto view = read_prompt(conversation);
  return decide(view, [&](const std::string&, char letter, const Requirement* req, const Superlative* sup) -> std::optional<YesNo> {
    const auto& category = view.manifest.find(letter)->category;
    constexpr YesNo yes{0.9, 0.1}, no{0.1, 0.9}, unsure{0.5, 0.5};
    if (sup) {
      auto it = tiers_->concepts.find(sup->concept_name);
      if (it == tiers_->concepts.end()) return unsure;
      if (it->second.high.count(category)) return yes;
      if (it->second.low.count(category)) return no;
      return unsure;
    }
    bool truth = false;
    switch (req->kind) {
      case Requirement::Kind::container:
        truth = registry_->is_container_category(category);
        break;
      case Requirement::Kind::furniture:
        truth = is_furniture_category(category);
        break;
      case Requirement::Kind::label: {
        auto label = labels_->label_for(req->concept_name, category);
        if (!label) return unsure;
        truth = *label == req->label;
        break;
      }
    }
    if (req->negated) truth = !truth;
    return truth ? yes : no;
  });
}

}  // namespace physground
