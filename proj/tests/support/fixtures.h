#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "physground/concepts.h"
#include "physground/datapipe.h"
#include "physground/grounding.h"

namespace physground::testing {

std::string golden_path(const std::string& name);
std::string read_golden(const std::string& name);

// Ten objects whose automatic annotations are counted by hand in the tests.
std::vector<ObjectRecord> roster10();

// Three crowd labels per example: 581 unanimous, 356 two-to-one and 63
// three-way splits (1000 examples).
AnnotationSet agreement_fixture();

// Transparency gold: 776 opaque, 200 transparent, 24 translucent; the
// training labels are majority opaque.
struct BaselineFixture {
  AnnotationSet train;
  GoldSet test;
};
BaselineFixture transparency_fixture();

// A complete 250-item job for `concept_name` with 25 checks. Items name
// synthetic objects; check truths are the first registry label
// (categorical) or first_higher (preference).
AnnotationJob synthetic_job(const std::string& id, const std::string& concept_name, std::uint64_t seed);

// The response that passes (or fails) the check at `index`.
Response correct_response(const AnnotationJob& job, std::size_t index);
Response wrong_response(const AnnotationJob& job, std::size_t index);

// Preferences sampled from a Bradley-Terry model over planted latents
// theta ~ N(0, 1.5^2) for objects "o0".."o{n-1}" on concept mass.
struct PlantedPreferences {
  std::vector<double> theta;
  std::vector<PreferenceExample> examples;
};
PlantedPreferences planted_preferences(int objects, int samples, std::uint64_t seed);

struct PairAccuracy {
  std::size_t pairs = 0;
  std::size_t correct = 0;
  double accuracy() const { return pairs ? static_cast<double>(correct) / pairs : 0.0; }
};
// Ordering accuracy of a fitted model on planted pairs with |gap| >= min_gap.
PairAccuracy planted_pair_accuracy(const LatentScoreModel& model, const std::vector<double>& theta, double min_gap);

// The worked dialogues of a prompt listing, split into policy turns and
// the answer blocks between them.
struct Dialogue {
  std::string listing;  // object list line
  std::string instruction;
  std::vector<std::string> turns;
  std::vector<std::string> answer_blocks;
};
std::vector<Dialogue> golden_dialogues(const std::string& golden_name);

}  // namespace physground::testing
