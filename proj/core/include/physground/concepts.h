#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace physground {

enum class ConceptKind { categorical, continuous };
enum class Applicability { all_objects, containers_only };

struct ConceptSpec {
  std::string name;
  ConceptKind kind = ConceptKind::continuous;
  Applicability applicability = Applicability::all_objects;
  // Registry label order; doubles as the deterministic tie-break order.
  std::vector<std::string> labels;
  bool allows_other = false;
  std::string question_prompt;
  std::string instructions;
  bool held_out = false;

  bool categorical() const { return kind == ConceptKind::categorical; }
  bool containers_only() const { return applicability == Applicability::containers_only; }
  bool has_label(std::string_view label) const;

  friend bool operator==(const ConceptSpec&, const ConceptSpec&) = default;
};

class ConceptRegistry {
 public:
  ConceptRegistry() = default;
  ConceptRegistry(std::vector<ConceptSpec> concepts, std::vector<std::string> container_categories);

  // The versioned registry compiled into the library.
  static const ConceptRegistry& shipped();
  static ConceptRegistry parse(std::string_view text, std::string source = "<registry>");
  std::string serialize() const;

  const std::vector<ConceptSpec>& concepts() const { return concepts_; }
  const std::vector<std::string>& container_categories() const { return containers_; }
  const ConceptSpec* find(std::string_view name) const;
  // Throws NotFound.
  const ConceptSpec& get(std::string_view name) const;
  bool is_container_category(std::string_view category) const;

  friend bool operator==(const ConceptRegistry&, const ConceptRegistry&) = default;

 private:
  void validate() const;

  std::vector<ConceptSpec> concepts_;
  std::vector<std::string> containers_;
};

std::vector<ConceptSpec> load_registry();

struct Rect {
  double x = 0, y = 0, width = 0, height = 0;
  double area() const { return width * height; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

struct BoundingBox {
  std::string image_ref;  // opaque, never decoded
  Rect rect;
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct ObjectRecord {
  std::string instance_id;
  std::string category;
  std::vector<BoundingBox> boxes;
  bool is_container = false;

  friend bool operator==(const ObjectRecord&, const ObjectRecord&) = default;
};

// Builds a record with is_container derived from the registry's container
// list. Throws InvalidInput when there is no bounding box.
ObjectRecord make_object(std::string instance_id, std::string category, std::vector<BoundingBox> boxes,
                         const ConceptRegistry& registry = ConceptRegistry::shipped());

bool concept_applies(const ConceptSpec& concept_spec, const ObjectRecord& object);

enum class Source { crowd, automatic };
enum class Verdict { first_higher, second_higher, equal, unclear };

std::string_view to_string(Source source);
std::string_view to_string(Verdict verdict);
Source parse_source(std::string_view text);
Verdict parse_verdict(std::string_view text);
Verdict flip(Verdict verdict);

struct CategoricalAnnotation {
  std::string object;
  std::string concept_name;
  std::string label;
  std::string annotator;
  Source source = Source::crowd;
  // Set for automatic labels that a manual patch replaced.
  bool overridden = false;

  friend bool operator==(const CategoricalAnnotation&, const CategoricalAnnotation&) = default;
};

struct PreferenceAnnotation {
  std::string first;
  std::string second;
  std::string concept_name;
  Verdict verdict = Verdict::unclear;
  std::string annotator;
  Source source = Source::crowd;

  friend bool operator==(const PreferenceAnnotation&, const PreferenceAnnotation&) = default;
};

struct AnnotationSet {
  std::vector<CategoricalAnnotation> categorical;
  std::vector<PreferenceAnnotation> preference;

  std::size_t size() const { return categorical.size() + preference.size(); }
  void append(const AnnotationSet& other);
  friend bool operator==(const AnnotationSet&, const AnnotationSet&) = default;
};

// Open-ended labels are stored trimmed and lowercased.
std::string normalize_label(std::string_view label);

// Checks type invariants against the registry. When `objects` is given,
// applicability is checked too. Throws InvalidInput.
void validate(const CategoricalAnnotation& a, const ConceptRegistry& registry,
              const std::map<std::string, ObjectRecord>* objects = nullptr);
void validate(const PreferenceAnnotation& a, const ConceptRegistry& registry,
              const std::map<std::string, ObjectRecord>* objects = nullptr);

enum class SplitSet { train, validation, test };
std::string_view to_string(SplitSet set);

struct SplitFractions {
  double train = 0.730;
  double validation = 0.148;
  double test = 0.122;
};

struct DatasetSplit {
  std::map<std::string, SplitSet> assignment;
  std::uint64_t seed = 0;

  std::size_t count(SplitSet set) const;
  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

// Category-stratified seeded split. Categories with fewer than three
// instances go entirely to train.
DatasetSplit make_split(std::span<const ObjectRecord> objects, SplitFractions fractions, std::uint64_t seed);

// Question prompt for one object. With `with_category`, "object" or
// "container" is replaced by the category label and the sentence is
// pluralized when the label is plural.
std::string prompt_for(const ConceptSpec& concept_spec, const ObjectRecord& object, bool with_category);

bool is_plural_category(std::string_view category);

}  // namespace physground
