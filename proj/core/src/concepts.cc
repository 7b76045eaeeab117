#include "physground/concepts.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <sstream>

#include "physground/errors.h"
#include "physground/kvdoc.h"
#include "physground/rng.h"
#include "physground/shipped_data.h"

namespace physground {

bool ConceptSpec::has_label(std::string_view label) const {
  return std::find(labels.begin(), labels.end(), label) != labels.end();
}

ConceptRegistry::ConceptRegistry(std::vector<ConceptSpec> concepts, std::vector<std::string> container_categories)
    : concepts_(std::move(concepts)), containers_(std::move(container_categories)) {
  validate();
}

void ConceptRegistry::validate() const {
  std::set<std::string> names;
  for (const auto& c : concepts_) {
    if (c.name.empty()) throw InvalidInput("concept with empty name");
    if (!names.insert(c.name).second) throw InvalidInput("duplicate concept '" + c.name + "'");
    if (c.categorical() && c.labels.empty())
      throw InvalidInput("categorical concept '" + c.name + "' has no labels");
    if (!c.categorical() && !c.labels.empty())
      throw InvalidInput("continuous concept '" + c.name + "' must not list labels");
    if (!c.categorical() && c.allows_other)
      throw InvalidInput("continuous concept '" + c.name + "' cannot allow open-ended labels");
    if (c.question_prompt.empty()) throw InvalidInput("concept '" + c.name + "' has no question prompt");
  }
}

const ConceptRegistry& ConceptRegistry::shipped() {
  static const ConceptRegistry registry = parse(shipped_file("registry.conf"), "registry.conf");
  return registry;
}

ConceptRegistry ConceptRegistry::parse(std::string_view text, std::string source) {
  auto doc = parse_kv(text, std::move(source));
  doc.expect_schema("physground.registry", 1);
  std::vector<ConceptSpec> concepts;
  for (const auto* s : doc.all("concept")) {
    if (s->argument.empty()) fail_at(doc.source, s->line, "concept section needs a name");
    ConceptSpec c;
    c.name = s->argument;
    const auto& kind = s->require("kind");
    if (kind.value == "continuous") {
      c.kind = ConceptKind::continuous;
    } else if (kind.value == "categorical") {
      c.kind = ConceptKind::categorical;
    } else {
      fail_at(doc.source, kind.line, "unknown kind '" + kind.value + "'");
    }
    const auto& app = s->require("applicability");
    if (app.value == "all") {
      c.applicability = Applicability::all_objects;
    } else if (app.value == "containers") {
      c.applicability = Applicability::containers_only;
    } else {
      fail_at(doc.source, app.line, "unknown applicability '" + app.value + "'");
    }
    c.held_out = s->get_bool("held_out", false);
    c.question_prompt = s->require("prompt").value;
    c.instructions = s->get("instructions").value_or("");
    if (auto labels = s->get("labels")) c.labels = split_list(*labels);
    c.allows_other = s->get_bool("allows_other", false);
    concepts.push_back(std::move(c));
  }
  std::vector<std::string> containers;
  if (auto sections = doc.all("containers"); !sections.empty())
    containers = split_list(sections.front()->require("categories").value);
  try {
    return ConceptRegistry(std::move(concepts), std::move(containers));
  } catch (const InvalidInput& e) {
    throw InvalidInput(doc.source + ": " + e.what());
  }
}

std::string ConceptRegistry::serialize() const {
  std::ostringstream os;
  os << "schema = physground.registry\nversion = 1\n";
  for (const auto& c : concepts_) {
    os << "\n[concept " << c.name << "]\n";
    os << "kind = " << (c.categorical() ? "categorical" : "continuous") << "\n";
    os << "applicability = " << (c.containers_only() ? "containers" : "all") << "\n";
    os << "held_out = " << (c.held_out ? "true" : "false") << "\n";
    os << "prompt = " << c.question_prompt << "\n";
    if (!c.instructions.empty()) os << "instructions = " << c.instructions << "\n";
    if (c.categorical()) {
      os << "labels = " << join(c.labels, ", ") << "\n";
      os << "allows_other = " << (c.allows_other ? "true" : "false") << "\n";
    }
  }
  os << "\n[containers]\ncategories = " << join(containers_, ", ") << "\n";
  return os.str();
}

const ConceptSpec* ConceptRegistry::find(std::string_view name) const {
  for (const auto& c : concepts_)
    if (c.name == name) return &c;
  return nullptr;
}

const ConceptSpec& ConceptRegistry::get(std::string_view name) const {
  if (const auto* c = find(name)) return *c;
  throw NotFound("unknown concept '" + std::string(name) + "'");
}

bool ConceptRegistry::is_container_category(std::string_view category) const {
  return std::find(containers_.begin(), containers_.end(), category) != containers_.end();
}

std::vector<ConceptSpec> load_registry() { return ConceptRegistry::shipped().concepts(); }

ObjectRecord make_object(std::string instance_id, std::string category, std::vector<BoundingBox> boxes,
                         const ConceptRegistry& registry) {
  if (instance_id.empty()) throw InvalidInput("object record needs an instance id");
  if (boxes.empty()) throw InvalidInput("object '" + instance_id + "' has no bounding box");
  ObjectRecord r;
  r.is_container = registry.is_container_category(category);
  r.instance_id = std::move(instance_id);
  r.category = std::move(category);
  r.boxes = std::move(boxes);
  return r;
}

bool concept_applies(const ConceptSpec& concept_spec, const ObjectRecord& object) {
  return !concept_spec.containers_only() || object.is_container;
}

std::string_view to_string(Source source) { return source == Source::crowd ? "crowd" : "auto"; }

std::string_view to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::first_higher: return "first_higher";
    case Verdict::second_higher: return "second_higher";
    case Verdict::equal: return "equal";
    case Verdict::unclear: return "unclear";
  }
  return "unclear";
}

Source parse_source(std::string_view text) {
  if (text == "crowd") return Source::crowd;
  if (text == "auto") return Source::automatic;
  throw InvalidInput("unknown annotation source '" + std::string(text) + "'");
}

Verdict parse_verdict(std::string_view text) {
  if (text == "first_higher") return Verdict::first_higher;
  if (text == "second_higher") return Verdict::second_higher;
  if (text == "equal") return Verdict::equal;
  if (text == "unclear") return Verdict::unclear;
  throw InvalidInput("unknown verdict '" + std::string(text) + "'");
}

Verdict flip(Verdict verdict) {
  if (verdict == Verdict::first_higher) return Verdict::second_higher;
  if (verdict == Verdict::second_higher) return Verdict::first_higher;
  return verdict;
}

void AnnotationSet::append(const AnnotationSet& other) {
  categorical.insert(categorical.end(), other.categorical.begin(), other.categorical.end());
  preference.insert(preference.end(), other.preference.begin(), other.preference.end());
}

std::string normalize_label(std::string_view label) { return to_lower(trim(label)); }

namespace {

const ObjectRecord* lookup(const std::map<std::string, ObjectRecord>* objects, const std::string& id) {
  if (!objects) return nullptr;
  auto it = objects->find(id);
  if (it == objects->end()) throw InvalidInput("annotation references unknown object '" + id + "'");
  return &it->second;
}

}  // namespace

void validate(const CategoricalAnnotation& a, const ConceptRegistry& registry,
              const std::map<std::string, ObjectRecord>* objects) {
  const auto* c = registry.find(a.concept_name);
  if (!c) throw InvalidInput("annotation uses unknown concept '" + a.concept_name + "'");
  if (!c->categorical()) throw InvalidInput("categorical annotation on continuous concept '" + c->name + "'");
  if (a.label.empty()) throw InvalidInput("categorical annotation with empty label");
  if (!c->has_label(a.label) && !c->allows_other)
    throw InvalidInput("label '" + a.label + "' is not valid for concept '" + c->name + "'");
  if (const auto* o = lookup(objects, a.object); o && !concept_applies(*c, *o))
    throw InvalidInput("concept '" + c->name + "' does not apply to non-container '" + o->instance_id + "'");
}

void validate(const PreferenceAnnotation& a, const ConceptRegistry& registry,
              const std::map<std::string, ObjectRecord>* objects) {
  const auto* c = registry.find(a.concept_name);
  if (!c) throw InvalidInput("annotation uses unknown concept '" + a.concept_name + "'");
  if (c->categorical()) throw InvalidInput("preference annotation on categorical concept '" + c->name + "'");
  if (a.first == a.second) throw InvalidInput("preference compares '" + a.first + "' with itself");
  if (a.source == Source::automatic && (a.verdict == Verdict::equal || a.verdict == Verdict::unclear))
    throw InvalidInput("automatic preference annotations must be directional");
  for (const auto* id : {&a.first, &a.second})
    if (const auto* o = lookup(objects, *id); o && !concept_applies(*c, *o))
      throw InvalidInput("concept '" + c->name + "' does not apply to non-container '" + o->instance_id + "'");
}

std::string_view to_string(SplitSet set) {
  switch (set) {
    case SplitSet::train: return "train";
    case SplitSet::validation: return "validation";
    case SplitSet::test: return "test";
  }
  return "train";
}

std::size_t DatasetSplit::count(SplitSet set) const {
  return static_cast<std::size_t>(
      std::count_if(assignment.begin(), assignment.end(), [&](const auto& kv) { return kv.second == set; }));
}

DatasetSplit make_split(std::span<const ObjectRecord> objects, SplitFractions fractions, std::uint64_t seed) {
  const std::array<double, 3> f{fractions.train, fractions.validation, fractions.test};
  for (double x : f)
    if (!(x >= 0.0) || !std::isfinite(x)) throw InvalidInput("split fractions must be finite and nonnegative");
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw InvalidInput("split fractions must sum to 1");
  if (objects.empty()) throw InvalidInput("cannot split an empty roster");

  std::map<std::string, std::vector<std::string>> by_category;
  for (const auto& o : objects) by_category[o.category].push_back(o.instance_id);

  DatasetSplit split;
  split.seed = seed;
  std::array<double, 3> assigned{0, 0, 0};
  double processed = 0;
  for (auto& [category, ids] : by_category) {
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
      throw InvalidInput("duplicate instance id in category '" + category + "'");
    const auto n = ids.size();
    std::array<std::size_t, 3> take{0, 0, 0};
    if (n < 3) {
      take[0] = n;
    } else {
      take = {1, 1, 1};
      // Spread the remainder so cumulative totals track the requested fractions.
      for (std::size_t unit = 3; unit < n; ++unit) {
        std::size_t best = 0;
        double best_deficit = -1e300;
        for (std::size_t s = 0; s < 3; ++s) {
          double deficit = f[s] * (processed + static_cast<double>(n)) - (assigned[s] + static_cast<double>(take[s]));
          if (deficit > best_deficit + 1e-12) {
            best_deficit = deficit;
            best = s;
          }
        }
        ++take[best];
      }
    }
    DeterministicRng rng(mix_seed(seed, fnv1a(category)));
    rng.shuffle(std::span<std::string>(ids));
    std::size_t cursor = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t k = 0; k < take[s]; ++k) split.assignment[ids[cursor++]] = static_cast<SplitSet>(s);
      assigned[s] += static_cast<double>(take[s]);
    }
    processed += static_cast<double>(n);
  }
  return split;
}

bool is_plural_category(std::string_view category) {
  static const std::set<std::string, std::less<>> overrides_singular{
      "chest of drawers", "canvas", "bus", "cactus", "hummus", "lens", "iris", "octopus", "asparagus"};
  static const std::set<std::string, std::less<>> overrides_plural{"jeans", "pants", "clothes", "people"};
  auto lower = to_lower(category);
  if (overrides_singular.count(lower)) return false;
  if (overrides_plural.count(lower)) return true;
  if (lower.size() < 2) return false;
  return lower.back() == 's' && lower[lower.size() - 2] != 's' && lower[lower.size() - 2] != 'u';
}

namespace {

void replace_all(std::string& text, std::string_view from, std::string_view to) {
  for (std::size_t pos = 0; (pos = text.find(from, pos)) != std::string::npos; pos += to.size())
    text.replace(pos, from.size(), to);
}

}  // namespace

std::string prompt_for(const ConceptSpec& concept_spec, const ObjectRecord& object, bool with_category) {
  if (!concept_applies(concept_spec, object))
    throw InvalidInput("concept '" + concept_spec.name + "' applies only to containers; '" + object.instance_id +
                       "' is a " + object.category);
  std::string prompt = concept_spec.question_prompt;
  if (!with_category) return prompt;
  const bool plural = is_plural_category(object.category);
  for (std::string_view noun : {"this object", "this container"}) {
    auto pos = prompt.find(noun);
    if (pos == std::string::npos) continue;
    prompt.replace(pos, noun.size(), (plural ? "these " : "this ") + object.category);
    break;
  }
  if (plural) {
    replace_all(prompt, "Is these ", "Are these ");
    replace_all(prompt, " is these ", " are these ");
  }
  return prompt;
}

}  // namespace physground
