#include "physground/datapipe.h"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <tuple>

#include "json_codec.h"
#include "physground/errors.h"
#include "physground/kvdoc.h"
#include "physground/shipped_data.h"

namespace physground {

// --- tables -------------------------------------------------------------------

void TierTable::validate() const {
  for (const auto& [name, tiers] : concepts)
    for (const auto& c : tiers.high)
      if (tiers.low.count(c))
        throw InvalidInput("category '" + c + "' is in both tiers of concept '" + name + "'");
}

TierTable TierTable::parse(std::string_view text, std::string source) {
  auto doc = parse_kv(text, std::move(source));
  doc.expect_schema("physground.tiers", 1);
  TierTable table;
  for (const auto* s : doc.all("tier")) {
    if (s->argument.empty()) fail_at(doc.source, s->line, "tier section needs a concept name");
    auto& t = table.concepts[s->argument];
    for (auto& c : split_list(s->require("high").value)) t.high.insert(std::move(c));
    for (auto& c : split_list(s->require("low").value)) t.low.insert(std::move(c));
    for (const auto& c : t.high)
      if (t.low.count(c))
        fail_at(doc.source, s->line, "category '" + c + "' is in both tiers of concept '" + s->argument + "'");
  }
  return table;
}

const TierTable& TierTable::shipped() {
  static const TierTable table = parse(shipped_file("tiers.conf"), "tiers.conf");
  return table;
}

void CategoryLabelTable::validate() const {
  for (const auto& [name, labels] : concepts) {
    std::map<std::string, std::string> seen;
    for (const auto& [label, cats] : labels)
      for (const auto& c : cats)
        if (auto [it, fresh] = seen.emplace(c, label); !fresh)
          throw InvalidInput("category '" + c + "' has labels '" + it->second + "' and '" + label + "' for concept '" +
                             name + "'");
  }
}

CategoryLabelTable CategoryLabelTable::parse(std::string_view text, std::string source) {
  auto doc = parse_kv(text, std::move(source));
  doc.expect_schema("physground.labels", 1);
  CategoryLabelTable table;
  for (const auto* s : doc.all("labels")) {
    if (s->argument.empty()) fail_at(doc.source, s->line, "labels section needs a concept name");
    auto& labels = table.concepts[s->argument];
    std::map<std::string, std::string> seen;
    for (const auto& e : s->entries) {
      auto label = normalize_label(e.key);
      for (auto& c : split_list(e.value)) {
        if (auto [it, fresh] = seen.emplace(c, label); !fresh)
          fail_at(doc.source, e.line,
                  "category '" + c + "' already has label '" + it->second + "' for concept '" + s->argument + "'");
        labels[label].insert(std::move(c));
      }
    }
  }
  return table;
}

const CategoryLabelTable& CategoryLabelTable::shipped() {
  static const CategoryLabelTable table = parse(shipped_file("labels.conf"), "labels.conf");
  return table;
}

std::optional<std::string> CategoryLabelTable::label_for(const std::string& concept_name,
                                                         const std::string& category) const {
  auto it = concepts.find(concept_name);
  if (it == concepts.end()) return std::nullopt;
  for (const auto& [label, cats] : it->second)
    if (cats.count(category)) return label;
  return std::nullopt;
}

// --- automatic annotations --------------------------------------------------

AnnotationSet auto_annotate(std::span<const ObjectRecord> objects, const TierTable& tiers,
                            const CategoryLabelTable& labels, const ConceptRegistry& registry) {
  tiers.validate();
  labels.validate();
  AnnotationSet out;
  for (const auto& [name, t] : tiers.concepts) {
    const auto& spec = registry.get(name);
    if (spec.categorical()) throw InvalidInput("tier table lists categorical concept '" + name + "'");
    std::vector<const ObjectRecord*> high, low;
    for (const auto& o : objects) {
      if (!concept_applies(spec, o)) continue;
      if (t.high.count(o.category)) high.push_back(&o);
      if (t.low.count(o.category)) low.push_back(&o);
    }
    for (const auto* h : high)
      for (const auto* l : low)
        out.preference.push_back({h->instance_id, l->instance_id, name, Verdict::first_higher,
                                  std::string(kAutoAnnotator), Source::automatic});
  }
  for (const auto& [name, by_label] : labels.concepts) {
    const auto& spec = registry.get(name);
    if (!spec.categorical()) throw InvalidInput("label table lists continuous concept '" + name + "'");
    for (const auto& [label, _] : by_label)
      if (!spec.has_label(label) && !spec.allows_other)
        throw InvalidInput("label table uses '" + label + "', not a label of '" + name + "'");
    for (const auto& o : objects) {
      if (!concept_applies(spec, o)) continue;
      if (auto label = labels.label_for(name, o.category))
        out.categorical.push_back({o.instance_id, name, *label, std::string(kAutoAnnotator), Source::automatic});
    }
  }
  return out;
}

std::size_t apply_overrides(AnnotationSet& annotations, std::span<const LabelOverride> overrides) {
  std::size_t replaced = 0;
  for (const auto& o : overrides) {
    for (auto& a : annotations.categorical) {
      if (a.source != Source::automatic || a.object != o.object || a.concept_name != o.concept_name) continue;
      a.label = normalize_label(o.label);
      a.overridden = true;
      ++replaced;
    }
  }
  return replaced;
}

std::vector<LabelOverride> read_overrides(std::string_view text, std::string_view source) {
  std::vector<LabelOverride> out;
  detail::for_each_jsonl(text, source, "physground.overrides", [&](const detail::json& j, int line) {
    out.push_back({detail::get_string(j, "object", source, line), detail::get_string(j, "concept", source, line),
                   detail::get_string(j, "label", source, line)});
  });
  return out;
}

// --- pair sampling ------------------------------------------------------------

PairSample sample_pairs(std::span<const ObjectRecord> objects, const ConceptSpec& concept_spec, std::size_t n,
                        double same_category_fraction, std::uint64_t seed) {
  if (n == 0) throw InvalidInput("sample_pairs needs n >= 1");
  if (!(same_category_fraction >= 0 && same_category_fraction <= 1))
    throw InvalidInput("same-category fraction must be in [0, 1]");
  std::vector<const ObjectRecord*> eligible;
  for (const auto& o : objects)
    if (concept_applies(concept_spec, o)) eligible.push_back(&o);
  std::sort(eligible.begin(), eligible.end(),
            [](const ObjectRecord* a, const ObjectRecord* b) { return a->instance_id < b->instance_id; });

  PairSample out;
  DeterministicRng rng(mix_seed(seed, fnv1a(concept_spec.name)));
  const auto want_same = static_cast<std::size_t>(std::llround(static_cast<double>(n) * same_category_fraction));
  const std::size_t want_cross = n - want_same;

  std::vector<std::pair<std::size_t, std::size_t>> same;
  std::size_t same_total = 0;
  {
    std::map<std::string, std::vector<std::size_t>> by_category;
    for (std::size_t i = 0; i < eligible.size(); ++i) by_category[eligible[i]->category].push_back(i);
    for (const auto& [_, idx] : by_category) {
      for (std::size_t a = 0; a < idx.size(); ++a)
        for (std::size_t b = a + 1; b < idx.size(); ++b) same.emplace_back(idx[a], idx[b]);
    }
    same_total = same.size();
  }
  auto emit = [&](std::size_t a, std::size_t b) {
    if (rng.bernoulli(0.5)) std::swap(a, b);
    out.pairs.emplace_back(eligible[a]->instance_id, eligible[b]->instance_id);
  };

  // Same-category: partial Fisher-Yates over every candidate pair.
  const std::size_t take_same = std::min(want_same, same.size());
  for (std::size_t i = 0; i < take_same; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.below(same.size() - i));
    std::swap(same[i], same[j]);
    emit(same[i].first, same[i].second);
  }
  out.same_category = take_same;
  if (take_same < want_same)
    out.warnings.push_back("only " + std::to_string(take_same) + " same-category pairs available, " +
                           std::to_string(want_same) + " requested");

  const std::size_t m = eligible.size();
  const std::size_t cross_total = m < 2 ? 0 : m * (m - 1) / 2 - same_total;
  std::size_t take_cross = want_cross;
  if (cross_total < want_cross) {
    take_cross = cross_total;
    out.warnings.push_back("only " + std::to_string(cross_total) + " cross-category pairs available, " +
                           std::to_string(want_cross) + " requested");
  }
  std::set<std::pair<std::size_t, std::size_t>> used;
  if (take_cross * 2 > cross_total) {
    // Dense request: enumerate and shuffle.
    std::vector<std::pair<std::size_t, std::size_t>> cross;
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = a + 1; b < m; ++b)
        if (eligible[a]->category != eligible[b]->category) cross.emplace_back(a, b);
    for (std::size_t i = 0; i < take_cross; ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng.below(cross.size() - i));
      std::swap(cross[i], cross[j]);
      emit(cross[i].first, cross[i].second);
    }
  } else {
    while (used.size() < take_cross) {
      auto a = static_cast<std::size_t>(rng.below(m));
      auto b = static_cast<std::size_t>(rng.below(m));
      if (a == b || eligible[a]->category == eligible[b]->category) continue;
      if (a > b) std::swap(a, b);
      if (!used.emplace(a, b).second) continue;
      emit(a, b);
    }
  }
  for (const auto& w : out.warnings) std::clog << "warning: " << w << "\n";
  return out;
}

// --- jobs ---------------------------------------------------------------------

AnnotationJob::AnnotationJob(std::string id, std::string concept_name, std::vector<JobItem> items,
                             std::vector<std::optional<std::string>> truths, std::string annotator)
    : id_(std::move(id)),
      concept_(std::move(concept_name)),
      annotator_(std::move(annotator)),
      items_(std::move(items)),
      truths_(std::move(truths)) {
  if (items_.size() != truths_.size()) throw InvalidInput("job items and truth slots differ in length");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto want = items_[i].kind == ItemKind::categorical ? 1u : 2u;
    if (items_[i].objects.size() != want)
      throw InvalidInput("job item " + std::to_string(i) + " has " + std::to_string(items_[i].objects.size()) +
                         " objects, expected " + std::to_string(want));
  }
}

std::vector<std::size_t> AnnotationJob::check_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < truths_.size(); ++i)
    if (truths_[i]) out.push_back(i);
  return out;
}

std::string AnnotationJob::to_json() const {
  detail::json items = detail::json::array();
  for (std::size_t i = 0; i < items_.size(); ++i) {
    detail::json objs = detail::json::array();
    for (const auto& o : items_[i].objects)
      objs.push_back({{"instance_id", o.instance_id}, {"category", o.category}, {"box", detail::to_json(o.box)}});
    detail::json item{{"kind", items_[i].kind == ItemKind::categorical ? "categorical" : "preference"},
                      {"objects", objs}};
    if (truths_[i]) item["truth"] = *truths_[i];
    items.push_back(std::move(item));
  }
  detail::json j{{"schema", "physground.job"}, {"version", 1}, {"id", id_}, {"concept", concept_},
                 {"annotator", annotator_}, {"items", items}};
  return j.dump();
}

AnnotationJob AnnotationJob::from_json(std::string_view text, std::string_view source) {
  detail::json j;
  try {
    j = detail::json::parse(text);
  } catch (const detail::json::parse_error& e) {
    throw InvalidInput(std::string(source) + ": invalid job JSON: " + e.what());
  }
  try {
    if (j.value("schema", "") != "physground.job") throw InvalidInput(std::string(source) + ": not a job document");
    std::vector<JobItem> items;
    std::vector<std::optional<std::string>> truths;
    for (const auto& it : j.at("items")) {
      JobItem item;
      const auto kind = it.at("kind").get<std::string>();
      if (kind == "categorical") {
        item.kind = ItemKind::categorical;
      } else if (kind == "preference") {
        item.kind = ItemKind::preference;
      } else {
        throw InvalidInput(std::string(source) + ": unknown item kind '" + kind + "'");
      }
      for (const auto& o : it.at("objects"))
        item.objects.push_back({o.at("instance_id").get<std::string>(), o.at("category").get<std::string>(),
                                detail::box_from_json(o.at("box"))});
      items.push_back(std::move(item));
      truths.push_back(it.contains("truth") ? std::optional<std::string>(it["truth"].get<std::string>()) : std::nullopt);
    }
    return AnnotationJob(j.at("id").get<std::string>(), j.at("concept").get<std::string>(), std::move(items),
                         std::move(truths), j.value("annotator", ""));
  } catch (const detail::json::exception& e) {
    throw InvalidInput(std::string(source) + ": " + e.what());
  }
}

AnnotationJob build_job(const std::string& job_id, const ConceptSpec& concept_spec, std::span<const JobItem> pool,
                        std::span<const CheckItem> checks, std::uint64_t seed) {
  constexpr std::size_t kPool = kJobSize - kChecksPerJob;
  if (pool.size() < kPool)
    throw InvalidInput("job needs " + std::to_string(kPool) + " pool items, got " + std::to_string(pool.size()));
  if (checks.size() < kChecksPerJob)
    throw InvalidInput("job needs " + std::to_string(kChecksPerJob) + " attention checks, got " +
                       std::to_string(checks.size()));
  const auto expected = concept_spec.categorical() ? ItemKind::categorical : ItemKind::preference;
  for (std::size_t i = 0; i < kPool; ++i)
    if (pool[i].kind != expected) throw InvalidInput("pool item " + std::to_string(i) + " has the wrong kind for concept");
  for (std::size_t i = 0; i < kChecksPerJob; ++i)
    if (checks[i].item.kind != expected) throw InvalidInput("check " + std::to_string(i) + " has the wrong kind for concept");

  std::vector<std::size_t> slots(kJobSize);
  std::iota(slots.begin(), slots.end(), 0);
  DeterministicRng rng(mix_seed(seed, fnv1a(job_id)));
  for (std::size_t i = 0; i < kChecksPerJob; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.below(kJobSize - i));
    std::swap(slots[i], slots[j]);
  }
  std::vector<bool> is_check(kJobSize, false);
  for (std::size_t i = 0; i < kChecksPerJob; ++i) is_check[slots[i]] = true;

  std::vector<JobItem> items;
  std::vector<std::optional<std::string>> truths;
  std::size_t next_pool = 0, next_check = 0;
  for (std::size_t pos = 0; pos < kJobSize; ++pos) {
    if (is_check[pos]) {
      items.push_back(checks[next_check].item);
      truths.emplace_back(checks[next_check].truth);
      ++next_check;
    } else {
      items.push_back(pool[next_pool++]);
      truths.emplace_back(std::nullopt);
    }
  }
  return AnnotationJob(job_id, concept_spec.name, std::move(items), std::move(truths));
}

std::vector<CheckItem> checks_from_annotations(const AnnotationSet& annotations, const ConceptSpec& concept_spec,
                                               const std::map<std::string, ObjectRecord>& objects, std::size_t count,
                                               std::uint64_t seed) {
  auto item_object = [&](const std::string& id) {
    auto it = objects.find(id);
    if (it == objects.end()) throw InvalidInput("check references unknown object '" + id + "'");
    return ItemObject{id, it->second.category, select_bbox(it->second)};
  };
  std::vector<CheckItem> pool;
  if (concept_spec.categorical()) {
    for (const auto& a : annotations.categorical)
      if (a.source == Source::automatic && a.concept_name == concept_spec.name)
        pool.push_back({JobItem{ItemKind::categorical, {item_object(a.object)}}, a.label});
  } else {
    for (const auto& a : annotations.preference)
      if (a.source == Source::automatic && a.concept_name == concept_spec.name &&
          (a.verdict == Verdict::first_higher || a.verdict == Verdict::second_higher))
        pool.push_back({JobItem{ItemKind::preference, {item_object(a.first), item_object(a.second)}},
                        std::string(to_string(a.verdict))});
  }
  if (pool.size() < count)
    throw InvalidInput("only " + std::to_string(pool.size()) + " automatic annotations for concept '" +
                       concept_spec.name + "', " + std::to_string(count) + " checks requested");
  DeterministicRng rng(mix_seed(seed, fnv1a("checks:" + concept_spec.name)));
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  return pool;
}

AnnotatorScore score_annotator(const AnnotationJob& job, std::span<const Response> responses) {
  if (responses.size() != job.size())
    throw InvalidInput("responses cover " + std::to_string(responses.size()) + " of " + std::to_string(job.size()) +
                       " items");
  AnnotatorScore s;
  for (std::size_t i = 0; i < job.size(); ++i) {
    if (!job.is_check(i)) continue;
    ++s.checks;
    const auto& truth = *job.truth(i);
    const auto& r = responses[i];
    bool ok;
    if (job.items()[i].kind == ItemKind::preference)
      ok = r.verdict && (*r.verdict == Verdict::first_higher || *r.verdict == Verdict::second_higher) &&
           to_string(*r.verdict) == truth;
    else
      ok = !r.verdict && normalize_label(r.label) == normalize_label(truth);
    if (ok) ++s.correct;
  }
  s.accuracy = s.checks ? static_cast<double>(s.correct) / static_cast<double>(s.checks) : 0.0;
  // Compare on counts so 20/25 is exactly at the threshold.
  s.keep = s.checks > 0 && s.correct * 100 >= static_cast<std::size_t>(kKeepThreshold * 100) * s.checks;
  return s;
}

AnnotationSet job_annotations(const AnnotationJob& job, std::span<const Response> responses,
                              const std::string& annotator) {
  if (responses.size() != job.size()) throw InvalidInput("responses do not cover the job");
  AnnotationSet out;
  for (std::size_t i = 0; i < job.size(); ++i) {
    if (job.is_check(i)) continue;
    const auto& item = job.items()[i];
    const auto& r = responses[i];
    if (item.kind == ItemKind::categorical) {
      out.categorical.push_back(
          {item.objects[0].instance_id, job.concept_name(), normalize_label(r.label), annotator, Source::crowd});
    } else {
      if (!r.verdict) throw InvalidInput("preference item " + std::to_string(i) + " has no verdict");
      out.preference.push_back({item.objects[0].instance_id, item.objects[1].instance_id, job.concept_name(),
                                *r.verdict, annotator, Source::crowd});
    }
  }
  return out;
}

// --- agreement --------------------------------------------------------------

namespace {

struct Tally {
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  std::vector<std::string> order;  // first-seen label order for stable tie-breaks
  void add(const std::string& label) {
    if (!counts.count(label)) order.push_back(label);
    ++counts[label];
    ++total;
  }
  std::pair<std::string, std::size_t> top() const {
    std::pair<std::string, std::size_t> best{"", 0};
    for (const auto& l : order)
      if (counts.at(l) > best.second) best = {l, counts.at(l)};
    return best;
  }
};

}  // namespace

FilteredGold majority_filter(const AnnotationSet& annotations, std::size_t k) {
  if (k == 0) throw InvalidInput("k must be positive");
  FilteredGold out;
  std::map<std::pair<std::string, std::string>, Tally> categorical;
  for (const auto& a : annotations.categorical)
    if (a.source == Source::crowd) categorical[{a.object, a.concept_name}].add(normalize_label(a.label));
  using PairKey = std::tuple<std::string, std::string, std::string>;
  std::map<PairKey, Tally> preference;
  for (const auto& a : annotations.preference) {
    if (a.source != Source::crowd) continue;
    const bool swap = a.second < a.first;
    const Verdict v = swap ? flip(a.verdict) : a.verdict;
    preference[{swap ? a.second : a.first, swap ? a.first : a.second, a.concept_name}].add(std::string(to_string(v)));
  }
  auto judge = [&](const Tally& t, const std::string& what) -> std::optional<std::string> {
    if (t.total != k) {
      out.stats.diagnostics.push_back(what + ": " + std::to_string(t.total) + " annotations, expected " +
                                      std::to_string(k));
      return std::nullopt;
    }
    ++out.stats.examples;
    auto [label, n] = t.top();
    if (n * 2 <= k) return std::nullopt;
    ++out.stats.majority;
    if (n == k) ++out.stats.unanimous;
    return label;
  };
  for (const auto& [key, t] : categorical)
    if (auto label = judge(t, "object '" + key.first + "' concept '" + key.second + "'"))
      out.categorical.push_back({key.first, key.second, *label, "majority", Source::crowd});
  for (const auto& [key, t] : preference) {
    const auto& [first, second, concept_name] = key;
    auto label = judge(t, "pair ('" + first + "', '" + second + "') concept '" + concept_name + "'");
    if (!label || *label == "unclear") continue;
    out.preference.push_back({first, second, concept_name, parse_verdict(*label), "majority", Source::crowd});
  }
  return out;
}

std::string agreement_report(const AgreementStats& stats) {
  detail::json j{{"schema", "physground.agreement"},
                 {"version", 1},
                 {"examples", stats.examples},
                 {"majority", stats.majority},
                 {"unanimous", stats.unanimous},
                 {"majority_percent", std::round(stats.majority_fraction() * 1000.0) / 10.0},
                 {"unanimous_percent", std::round(stats.unanimous_fraction() * 1000.0) / 10.0},
                 {"rejected", stats.diagnostics}};
  return j.dump(2) + "\n";
}

// --- balanced sampling --------------------------------------------------------

double SubDataset::weight() const { return std::sqrt(static_cast<double>(annotations.size())); }

BalancedSampler::BalancedSampler(std::vector<SubDataset> subdatasets, std::uint64_t seed)
    : subdatasets_(std::move(subdatasets)), rng_(seed) {
  if (subdatasets_.empty()) throw InvalidInput("balanced sampler needs at least one sub-dataset");
  double total = 0;
  for (const auto& s : subdatasets_) {
    if (s.annotations.size() == 0) throw InvalidInput("sub-dataset '" + s.name + "' is empty");
    total += s.weight();
  }
  double acc = 0;
  for (const auto& s : subdatasets_) {
    probabilities_.push_back(s.weight() / total);
    acc += s.weight() / total;
    cumulative_.push_back(acc);
  }
  cumulative_.back() = 1.0;
}

SampledExample BalancedSampler::next() {
  const double u = rng_.uniform();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  const auto which = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cumulative_.begin(),
                                                                      static_cast<std::ptrdiff_t>(cumulative_.size() - 1)));
  return {which, static_cast<std::size_t>(rng_.below(subdatasets_[which].annotations.size()))};
}

// --- bounding boxes ---------------------------------------------------------

double area_visibility(const ObjectRecord&, const BoundingBox& box) { return box.rect.area(); }

const BoundingBox& select_bbox(const ObjectRecord& record, const VisibilityScorer& scorer) {
  if (record.boxes.empty()) throw InvalidInput("object '" + record.instance_id + "' has no bounding box");
  std::size_t best = 0;
  double best_score = scorer(record, record.boxes[0]);
  for (std::size_t i = 1; i < record.boxes.size(); ++i) {
    const double s = scorer(record, record.boxes[i]);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return record.boxes[best];
}

}  // namespace physground
