#include "physground/oracle.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <regex>
#include <set>

#include "physground/errors.h"
#include "physground/kvdoc.h"
#include "physground/rng.h"

namespace physground {

namespace {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](unsigned char x, unsigned char y) {
           return std::tolower(x) == std::tolower(y);
         });
}

constexpr std::string_view kTemplatePrefix = "Question: ";
constexpr std::string_view kTemplateSuffix = " Respond unknown if you are not sure. Short answer:";

}  // namespace

AnswerDistribution::AnswerDistribution(std::vector<AnswerEntry> entries, bool normalized)
    : entries_(std::move(entries)), normalized_(normalized) {
  if (entries_.empty()) throw InvalidInput("answer distribution has no entries");
  std::set<std::string> seen;
  double total = 0;
  for (const auto& e : entries_) {
    if (!(e.probability >= 0.0) || !std::isfinite(e.probability))
      throw InvalidInput("answer '" + e.answer + "' has invalid probability");
    if (!seen.insert(to_lower(e.answer)).second) throw InvalidInput("duplicate answer '" + e.answer + "'");
    total += e.probability;
  }
  if (normalized_ && std::abs(total - 1.0) > 1e-6)
    throw InvalidInput("normalized distribution sums to " + std::to_string(total));
}

std::optional<double> AnswerDistribution::probability(std::string_view answer) const {
  for (const auto& e : entries_)
    if (iequals(e.answer, answer)) return e.probability;
  return std::nullopt;
}

AnswerDistribution AnswerDistribution::renormalized() const {
  double total = 0;
  for (const auto& e : entries_) total += e.probability;
  if (total <= 0) throw InvalidInput("cannot renormalize a distribution with zero mass");
  auto copy = entries_;
  for (auto& e : copy) e.probability /= total;
  return AnswerDistribution(std::move(copy), true);
}

std::vector<AnswerEntry> AnswerDistribution::ranked() const {
  auto out = entries_;
  std::stable_sort(out.begin(), out.end(), [](const AnswerEntry& a, const AnswerEntry& b) {
    if (a.probability != b.probability) return a.probability > b.probability;
    auto la = to_lower(a.answer), lb = to_lower(b.answer);
    if (la != lb) return la < lb;
    return a.answer < b.answer;
  });
  return out;
}

ConceptScore concept_score(const AnswerDistribution& dist, std::string object, std::string concept_name) {
  auto yes = dist.probability("yes");
  auto no = dist.probability("no");
  if (!yes || !no) throw InvalidInput("score needs both 'yes' and 'no' answers");
  ConceptScore s;
  s.object = std::move(object);
  s.concept_name = std::move(concept_name);
  if (*yes == 0 && *no == 0) throw InvalidInput("p(yes) and p(no) are both zero");
  if (*no == 0) {
    s.infinite = true;
    s.score = std::numeric_limits<double>::infinity();
    s.log_score = std::numeric_limits<double>::infinity();
  } else if (*yes == 0) {
    s.zero = true;
    s.score = 0;
    s.log_score = -std::numeric_limits<double>::infinity();
  } else {
    s.score = *yes / *no;
    s.log_score = std::log(*yes) - std::log(*no);
  }
  return s;
}

std::string answer_prompt_template(std::string_view question) {
  std::string out(kTemplatePrefix);
  out += question;
  out += kTemplateSuffix;
  return out;
}

std::vector<std::string> lint_question(std::string_view question) {
  std::vector<std::string> warnings;
  if (trim(question).empty()) warnings.emplace_back("question text is empty");
  return warnings;
}

std::string strip_answer_template(std::string_view prompt) {
  if (prompt.size() >= kTemplatePrefix.size() + kTemplateSuffix.size() && prompt.starts_with(kTemplatePrefix) &&
      prompt.ends_with(kTemplateSuffix))
    return std::string(prompt.substr(kTemplatePrefix.size(), prompt.size() - kTemplatePrefix.size() - kTemplateSuffix.size()));
  return std::string(prompt);
}

namespace {

bool has_word(const std::string& text, const char* pattern) {
  return std::regex_search(text, std::regex(std::string("\\b(") + pattern + ")\\b"));
}

struct Synonym {
  const char* pattern;
  const char* label;
};

}  // namespace

QuestionRoute route_question(std::string_view question, const ConceptRegistry& registry) {
  QuestionRoute r;
  const auto q = to_lower(strip_answer_template(question));
  r.negated = has_word(q, "not|non");
  using K = QuestionRoute::Kind;
  auto set = [&](K kind, std::string concept_name, std::string label = {}) {
    r.kind = kind;
    r.concept_name = std::move(concept_name);
    r.label = std::move(label);
    return r;
  };

  if (has_word(q, "transparent, translucent, or opaque|opaque, transparent, or translucent"))
    return set(K::label_open, "transparency");
  if (has_word(q, "what material|what is this object made of|what is it made of|made of what"))
    return set(K::label_open, "material");
  if (has_word(q, "what is inside|what does this container contain|what is in|contents of"))
    return set(K::label_open, "contents");

  if (has_word(q, "a lot of liquid|liquid capacity|large volume|much liquid")) return set(K::continuous_yes_no, "liquid_capacity");
  if (has_word(q, "hold a liquid|hold liquids?|hold water|carry water|carry liquids?|contain liquids?|transport liquids?|used to carry"))
    return set(K::label_yes_no, "can_contain_liquid", "yes");
  if (has_word(q, "sealed|airtight")) return set(K::label_yes_no, "is_sealed", "yes");
  if (has_word(q, "furniture")) return set(K::furniture_yes_no, "");
  if (has_word(q, "empty")) return set(K::label_yes_no, "contents", "nothing");
  if (has_word(q, "inside|contain|contains|filled with|have in it")) {
    static const std::regex what(R"(\b(?:inside|contain|contains|filled with|have|has|with)\s+(?:any\s+|some\s+)?([a-z]+?)(?:s)?\b)");
    std::smatch m;
    std::string label;
    auto search_from = q;
    while (std::regex_search(search_from, m, what)) {
      std::string word = m[1];
      if (word != "it" && word != "this" && word != "the" && word != "a" && word != "an" && word != "anything") {
        label = word;
        break;
      }
      search_from = m.suffix();
    }
    if (!label.empty()) return set(K::label_yes_no, "contents", label);
  }
  if (has_word(q, "a container|container\\?")) return set(K::container_yes_no, "");

  static const Synonym materials[] = {{"plastic", "plastic"}, {"glass", "glass"},   {"ceramic", "ceramic"},
                                      {"metal|metallic", "metal"}, {"wood|wooden", "wood"}, {"paper|cardboard", "paper"},
                                      {"fabric|cloth", "fabric"}};
  for (const auto& m : materials)
    if (has_word(q, m.pattern)) return set(K::label_yes_no, "material", m.label);
  static const Synonym transparency[] = {
      {"transparent|clear|see-through", "transparent"}, {"translucent", "translucent"}, {"opaque", "opaque"}};
  for (const auto& t : transparency)
    if (has_word(q, t.pattern)) return set(K::label_yes_no, "transparency", t.label);

  struct ContinuousWord {
    const char* pattern;
    const char* concept_name;
    bool antonym;
  };
  static const ContinuousWord continuous[] = {
      {"heavy|heavier|heaviest|weigh|weighs", "mass", false},
      {"light|lightweight|lighter", "mass", true},
      {"fragile|breakable|break easily", "fragility", false},
      {"sturdy|durable", "fragility", true},
      {"deformable|bendable|flexible|soft|squishy", "deformability", false},
      {"rigid|stiff", "deformability", true},
      {"dense", "density", false},
  };
  for (const auto& c : continuous) {
    if (has_word(q, c.pattern)) {
      set(K::continuous_yes_no, c.concept_name);
      if (c.antonym) r.negated = !r.negated;
      return r;
    }
  }
  if (has_word(q, "food|edible")) return set(K::label_yes_no, "material", "food");
  (void)registry;
  return set(K::unknown, "");
}

MockOracle::MockOracle(GroundTruth truth, MockConfig config, const ConceptRegistry& registry)
    : truth_(std::move(truth)), config_(config), registry_(&registry) {
  if (config_.flip_probability < 0 || config_.flip_probability > 1)
    throw InvalidInput("flip probability must be in [0, 1]");
  if (config_.logit_jitter < 0) throw InvalidInput("logit jitter must be nonnegative");
}

namespace {

AnswerDistribution yes_no_unknown(double p_yes, double p_no, double p_unknown) {
  return AnswerDistribution({{"yes", p_yes}, {"no", p_no}, {"unknown", p_unknown}}, true);
}

AnswerDistribution mostly_unknown() { return yes_no_unknown(0.1, 0.1, 0.8); }

AnswerDistribution binary_answer(bool yes) { return yes ? yes_no_unknown(0.85, 0.05, 0.10) : yes_no_unknown(0.05, 0.85, 0.10); }

// Re-expresses `full` over the requested candidates, unnormalized.
AnswerDistribution restrict_to(const AnswerDistribution& full, const std::vector<std::string>& candidates) {
  if (candidates.empty()) return full;
  std::vector<AnswerEntry> out;
  for (const auto& c : candidates) out.push_back({c, full.probability(c).value_or(0.0)});
  return AnswerDistribution(std::move(out), false);
}

}  // namespace

AnswerDistribution MockOracle::query(const OracleRequest& request) {
  auto it = truth_.find(request.object);
  if (it == truth_.end()) throw NotFound("mock oracle has no object '" + request.object + "'");
  const PropertyTable& props = it->second;
  const auto question = strip_answer_template(request.prompt);
  if (trim(question).empty()) throw InvalidInput("oracle request without a prompt");
  DeterministicRng rng(mix_seed(config_.seed, fnv1a(question, fnv1a(request.object + "\x1f"))));
  const bool flipped = config_.flip_probability > 0 && rng.bernoulli(config_.flip_probability);
  const auto route = route_question(question, *registry_);
  using K = QuestionRoute::Kind;

  AnswerDistribution full;
  switch (route.kind) {
    case K::continuous_yes_no: {
      auto v = props.continuous.find(route.concept_name);
      if (v == props.continuous.end()) {
        full = mostly_unknown();
        break;
      }
      double logit = v->second;
      if (flipped) logit = -logit;
      if (config_.logit_jitter > 0) logit += config_.logit_jitter * rng.normal();
      if (route.negated) logit = -logit;
      const double sig = 1.0 / (1.0 + std::exp(-logit));
      full = yes_no_unknown(0.9 * sig, 0.9 * (1.0 - sig), 0.1);
      break;
    }
    case K::label_yes_no: {
      auto v = props.categorical.find(route.concept_name);
      if (v == props.categorical.end()) {
        full = mostly_unknown();
        break;
      }
      bool match = v->second == route.label;
      full = binary_answer((match != flipped) != route.negated);
      break;
    }
    case K::container_yes_no:
      full = binary_answer((props.container != flipped) != route.negated);
      break;
    case K::furniture_yes_no:
      full = binary_answer((props.furniture != flipped) != route.negated);
      break;
    case K::label_open: {
      const auto& spec = registry_->get(route.concept_name);
      auto v = props.categorical.find(route.concept_name);
      std::vector<std::string> labels;
      for (const auto& l : spec.labels)
        if (l != "unknown") labels.push_back(l);
      if (v == props.categorical.end() || v->second == "unknown") {
        std::vector<AnswerEntry> entries{{"unknown", 0.8}};
        for (const auto& l : labels) entries.push_back({l, 0.2 / static_cast<double>(labels.size())});
        full = AnswerDistribution(std::move(entries), true);
        break;
      }
      std::string answer = v->second;
      if (std::find(labels.begin(), labels.end(), answer) == labels.end()) labels.push_back(answer);
      if (flipped && labels.size() > 1) {
        std::vector<std::string> others;
        for (const auto& l : labels)
          if (l != answer) others.push_back(l);
        answer = others[rng.below(others.size())];
      }
      std::vector<AnswerEntry> entries{{answer, 0.7}, {"unknown", 0.1}};
      const double rest = labels.size() > 1 ? 0.2 / static_cast<double>(labels.size() - 1) : 0.0;
      for (const auto& l : labels)
        if (l != answer) entries.push_back({l, rest});
      if (labels.size() == 1) entries[0].probability = 0.9;
      full = AnswerDistribution(std::move(entries), true);
      break;
    }
    case K::unknown:
      full = mostly_unknown();
      break;
  }
  return restrict_to(full, request.candidates);
}

ScriptedOracle::ScriptedOracle(std::vector<Entry> entries, std::string model)
    : entries_(std::move(entries)), used_(entries_.size(), false), model_(std::move(model)) {}

AnswerDistribution ScriptedOracle::query(const OracleRequest& request) {
  std::lock_guard lock(mutex_);
  const auto question = strip_answer_template(request.prompt);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (used_[i] || entries_[i].object != request.object || entries_[i].question != question) continue;
    used_[i] = true;
    return restrict_to(entries_[i].answer, request.candidates);
  }
  throw NotFound("scripted oracle has no remaining answer for object '" + request.object + "' and question '" +
                 question + "'");
}

std::size_t ScriptedOracle::remaining() const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(std::count(used_.begin(), used_.end(), false));
}

}  // namespace physground
