#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "physground/concepts.h"
#include "physground/oracle.h"

namespace physground {

// Bradley-Terry preference math over latent log-scores theta = log s(o, c).
//
// The fitted quantity here is a free per-(object, concept) latent rather
// than the weights of a vision-language model; the objective is the same
// pairwise binary cross-entropy, so every identity can be checked directly.

struct PreferenceExample {
  std::string first;
  std::string second;
  std::string concept_name;
  double target_first = 0.5;  // y1; y2 = 1 - y1

  double target_second() const { return 1.0 - target_first; }
};

// first_higher -> (1, 0), second_higher -> (0, 1), equal -> (0.5, 0.5);
// unclear verdicts produce no example.
std::vector<PreferenceExample> to_examples(std::span<const PreferenceAnnotation> annotations);

using ScoreKey = std::pair<std::string, std::string>;  // (instance id, concept)

struct LatentScoreModel {
  std::map<ScoreKey, double> theta;
  double l2_weight = 1e-4;
  bool centered = false;

  double at(const std::string& object, const std::string& concept_name) const;  // throws NotFound
  bool contains(const std::string& object, const std::string& concept_name) const;
  // Subtracts the per-concept mean.
  void center();
};

// P(first > second) = s1 / (s1 + s2) = logistic(log_s1 - log_s2).
// Accepts +-inf sentinels; throws InvalidInput when both are infinite with
// the same sign or either is NaN.
double bt_probability(double log_s1, double log_s2);

// Mean pairwise BCE plus l2_weight * sum(theta^2).
double bce_loss(const LatentScoreModel& model, std::span<const PreferenceExample> batch);
// Analytic gradient of bce_loss with respect to every theta entry.
std::map<ScoreKey, double> bce_gradient(const LatentScoreModel& model, std::span<const PreferenceExample> batch);

struct FitConfig {
  double learning_rate = 0.1;
  int steps = 2000;
  double l2_weight = 1e-4;
  std::uint64_t seed = 0;
  // Standard deviation of the seeded initial theta; zero starts at the origin.
  double init_scale = 0.01;
  double divergence_threshold = 1e6;
};

struct FitResult {
  LatentScoreModel model;
  std::vector<double> loss_history;  // loss before each step, plus the final loss
};

// Full-batch gradient descent. Returns a centered model.
// Throws InvalidInput for empty input and DivergenceError when the loss
// exceeds the threshold.
FitResult fit(std::span<const PreferenceExample> examples, const FitConfig& config);

// --- predictors -----------------------------------------------------------

// Argmax over the registry labels; exact ties go to the earlier label.
std::string predict_categorical(const AnswerDistribution& dist, const ConceptSpec& concept_spec);

struct PreferencePrediction {
  Verdict verdict = Verdict::first_higher;  // first_higher or second_higher
  bool tie = false;
};

PreferencePrediction predict_preference(const ConceptScore& first, const ConceptScore& second);

// Anything evaluate() can score. preference_probability returns the
// predicted probability that `first` ranks higher; deterministic
// predictors return exactly 0 or 1.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string predict_label(const std::string& object, const ConceptSpec& concept_spec) = 0;
  virtual double preference_probability(const std::string& first, const std::string& second,
                                        const ConceptSpec& concept_spec) = 0;
};

// Queries an oracle with each concept's registry prompt (optionally
// wrapped in the answer template).
class OraclePredictor : public Predictor {
 public:
  explicit OraclePredictor(Oracle& oracle, bool use_template = true) : oracle_(&oracle), use_template_(use_template) {}
  std::string predict_label(const std::string& object, const ConceptSpec& concept_spec) override;
  double preference_probability(const std::string& first, const std::string& second,
                                const ConceptSpec& concept_spec) override;

 private:
  std::string prompt(const ConceptSpec& concept_spec) const;
  Oracle* oracle_;
  bool use_template_;
};

class LatentModelPredictor : public Predictor {
 public:
  explicit LatentModelPredictor(const LatentScoreModel& model) : model_(&model) {}
  std::string predict_label(const std::string& object, const ConceptSpec& concept_spec) override;
  double preference_probability(const std::string& first, const std::string& second,
                                const ConceptSpec& concept_spec) override;

 private:
  const LatentScoreModel* model_;
};

// Predicts the modal training label per categorical concept. For
// continuous concepts the prediction is invariant to pair order, so its
// expected accuracy is chance: it reports probability 0.5.
class MostCommonPredictor : public Predictor {
 public:
  explicit MostCommonPredictor(std::map<std::string, std::string> modal) : modal_(std::move(modal)) {}
  std::string predict_label(const std::string& object, const ConceptSpec& concept_spec) override;
  double preference_probability(const std::string&, const std::string&, const ConceptSpec&) override { return 0.5; }
  const std::map<std::string, std::string>& modal_labels() const { return modal_; }

 private:
  std::map<std::string, std::string> modal_;
};

MostCommonPredictor most_common_baseline(const AnnotationSet& train,
                                         const ConceptRegistry& registry = ConceptRegistry::shipped());

// Seeded coin flips for preferences, uniform labels for categories.
class RandomPredictor : public Predictor {
 public:
  explicit RandomPredictor(std::uint64_t seed) : seed_(seed) {}
  std::string predict_label(const std::string& object, const ConceptSpec& concept_spec) override;
  double preference_probability(const std::string& first, const std::string& second,
                                const ConceptSpec& concept_spec) override;

 private:
  std::uint64_t seed_;
};

struct GoldSet {
  std::vector<CategoricalAnnotation> categorical;
  std::vector<PreferenceAnnotation> preference;
};

struct EvalReport {
  std::map<std::string, double> per_concept_accuracy;
  std::map<std::string, std::size_t> counts;
  double average = 0;
  std::vector<std::string> warnings;
};

// Per-concept accuracy; preference gold with equal/unclear verdicts is
// excluded. Concepts with no usable gold are omitted with a warning.
EvalReport evaluate(Predictor& predictor, const GoldSet& gold,
                    const ConceptRegistry& registry = ConceptRegistry::shipped());

std::string format_report_table(const EvalReport& report, const std::string& column = "Accuracy",
                                const ConceptRegistry& registry = ConceptRegistry::shipped());
std::string report_to_json(const EvalReport& report);

std::string write_model(const LatentScoreModel& model);
LatentScoreModel read_model(std::string_view text, std::string_view source = "<model>");

}  // namespace physground
