#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "physground/concepts.h"
#include "physground/rng.h"

namespace physground {

// High/low category tiers per continuous concept.
struct TierTable {
  struct Tiers {
    std::set<std::string> high;
    std::set<std::string> low;
    friend bool operator==(const Tiers&, const Tiers&) = default;
  };
  std::map<std::string, Tiers> concepts;

  static const TierTable& shipped();
  // Throws InvalidInput when a category sits in both tiers.
  static TierTable parse(std::string_view text, std::string source = "<tiers>");
  void validate() const;
};

// label -> categories per categorical concept.
struct CategoryLabelTable {
  std::map<std::string, std::map<std::string, std::set<std::string>>> concepts;

  static const CategoryLabelTable& shipped();
  // Throws InvalidInput when a category receives two labels for one concept.
  static CategoryLabelTable parse(std::string_view text, std::string source = "<labels>");
  void validate() const;
  std::optional<std::string> label_for(const std::string& concept_name, const std::string& category) const;
};

inline constexpr std::string_view kAutoAnnotator = "auto";

// Cross-tier preferences (always first_higher, high object first) and
// category-level labels. Containers-only concepts skip non-containers.
AnnotationSet auto_annotate(std::span<const ObjectRecord> objects, const TierTable& tiers,
                            const CategoryLabelTable& labels,
                            const ConceptRegistry& registry = ConceptRegistry::shipped());

struct LabelOverride {
  std::string object;
  std::string concept_name;
  std::string label;
};

// Manual corrections applied after auto_annotate. Matching records keep
// source=auto and get `overridden` set. Returns the number replaced.
std::size_t apply_overrides(AnnotationSet& annotations, std::span<const LabelOverride> overrides);
std::vector<LabelOverride> read_overrides(std::string_view text, std::string_view source = "<overrides>");

struct PairSample {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::size_t same_category = 0;
  std::vector<std::string> warnings;
};

// n unordered pairs without duplicates, round(n * same_category_fraction)
// of them within one category. When too few same-category pairs exist,
// all of them are used and a warning is recorded; the cross-category
// count stays n - round(n * fraction).
PairSample sample_pairs(std::span<const ObjectRecord> objects, const ConceptSpec& concept_spec, std::size_t n,
                        double same_category_fraction, std::uint64_t seed);

// --- crowd jobs -------------------------------------------------------------

inline constexpr std::size_t kJobSize = 250;
inline constexpr std::size_t kChecksPerJob = 25;
inline constexpr double kKeepThreshold = 0.80;

enum class ItemKind { categorical, preference };

struct ItemObject {
  std::string instance_id;
  std::string category;
  BoundingBox box;
  friend bool operator==(const ItemObject&, const ItemObject&) = default;
};

// One prompt shown to an annotator: one object (categorical) or two
// (preference).
struct JobItem {
  ItemKind kind = ItemKind::categorical;
  std::vector<ItemObject> objects;
  friend bool operator==(const JobItem&, const JobItem&) = default;
};

struct CheckItem {
  JobItem item;
  // Categorical label or a directional verdict name.
  std::string truth;
};

// A response: a label (categorical, possibly open-ended) or a verdict.
struct Response {
  std::string label;
  std::optional<Verdict> verdict;
  bool open_ended = false;
  friend bool operator==(const Response&, const Response&) = default;
};

class AnnotationJob {
 public:
  AnnotationJob() = default;
  AnnotationJob(std::string id, std::string concept_name, std::vector<JobItem> items,
                std::vector<std::optional<std::string>> truths, std::string annotator = {});

  const std::string& id() const { return id_; }
  const std::string& concept_name() const { return concept_; }
  const std::string& annotator() const { return annotator_; }
  const std::vector<JobItem>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  bool is_check(std::size_t index) const { return truths_.at(index).has_value(); }
  std::vector<std::size_t> check_positions() const;
  // Ground truth of a check item; kept out of every item view.
  const std::optional<std::string>& truth(std::size_t index) const { return truths_.at(index); }

  // Full job including check truths (admin/internal format).
  std::string to_json() const;
  static AnnotationJob from_json(std::string_view text, std::string_view source = "<job>");

 private:
  std::string id_;
  std::string concept_;
  std::string annotator_;
  std::vector<JobItem> items_;
  std::vector<std::optional<std::string>> truths_;
};

// 225 pool items in order and the first 25 checks, checks placed at seeded
// uniformly random positions. Throws InvalidInput for short pools.
AnnotationJob build_job(const std::string& job_id, const ConceptSpec& concept_spec, std::span<const JobItem> pool,
                        std::span<const CheckItem> checks, std::uint64_t seed);

// Draws attention checks from automatic annotations (known labels).
std::vector<CheckItem> checks_from_annotations(const AnnotationSet& annotations, const ConceptSpec& concept_spec,
                                               const std::map<std::string, ObjectRecord>& objects, std::size_t count,
                                               std::uint64_t seed);

struct AnnotatorScore {
  double accuracy = 0;
  std::size_t correct = 0;
  std::size_t checks = 0;
  bool keep = false;
};

// Accuracy over the check items; keep iff accuracy >= 0.80. Preference
// checks only accept the directional truth.
AnnotatorScore score_annotator(const AnnotationJob& job, std::span<const Response> responses);

// Non-check responses of a job as annotations (source=crowd).
AnnotationSet job_annotations(const AnnotationJob& job, std::span<const Response> responses,
                              const std::string& annotator);

// --- agreement --------------------------------------------------------------

struct AgreementStats {
  std::size_t examples = 0;  // examples with the right annotation count
  std::size_t majority = 0;
  std::size_t unanimous = 0;
  std::vector<std::string> diagnostics;  // rejected examples

  double majority_fraction() const { return examples ? static_cast<double>(majority) / examples : 0.0; }
  double unanimous_fraction() const { return examples ? static_cast<double>(unanimous) / examples : 0.0; }
};

struct FilteredGold {
  std::vector<CategoricalAnnotation> categorical;
  std::vector<PreferenceAnnotation> preference;
  AgreementStats stats;
};

// Groups crowd annotations by example ((object, concept) or unordered
// (pair, concept)); keeps examples where >= 2 of k annotators agree, using
// the majority label. Agreement stats count raw labels including
// "unclear"; an "unclear" majority never becomes gold.
FilteredGold majority_filter(const AnnotationSet& annotations, std::size_t k = 3);

std::string agreement_report(const AgreementStats& stats);

// --- balanced sampling --------------------------------------------------------

struct SubDataset {
  std::string name;
  AnnotationSet annotations;
  double weight() const;  // sqrt(|annotations|)
};

struct SampledExample {
  std::size_t subdataset = 0;
  std::size_t index = 0;  // index into categorical then preference records
};

// Infinite stream: picks a sub-dataset with probability sqrt(n_i)/sum sqrt(n_j),
// then a uniform record within it (with replacement).
class BalancedSampler {
 public:
  BalancedSampler(std::vector<SubDataset> subdatasets, std::uint64_t seed);

  SampledExample next();
  const std::vector<double>& probabilities() const { return probabilities_; }
  const std::vector<SubDataset>& subdatasets() const { return subdatasets_; }

 private:
  std::vector<SubDataset> subdatasets_;
  std::vector<double> probabilities_;
  std::vector<double> cumulative_;
  DeterministicRng rng_;
};

// --- bounding boxes ---------------------------------------------------------

using VisibilityScorer = std::function<double(const ObjectRecord&, const BoundingBox&)>;

double area_visibility(const ObjectRecord& record, const BoundingBox& box);

// Argmax of the scorer over the record's boxes; ties keep the first.
const BoundingBox& select_bbox(const ObjectRecord& record, const VisibilityScorer& scorer = area_visibility);

}  // namespace physground
