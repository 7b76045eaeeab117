#include "fixtures.h"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "physground/rng.h"

namespace physground::testing {

std::string golden_path(const std::string& name) { return std::string(PHYSGROUND_GOLDEN_DIR) + "/" + name; }

std::string read_golden(const std::string& name) {
  std::ifstream in(golden_path(name), std::ios::binary);
  if (!in) throw std::runtime_error("missing golden file " + name);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<ObjectRecord> roster10() {
  const std::vector<std::pair<std::string, std::string>> spec{
      {"tv1", "television"},    {"mw1", "microwave oven"}, {"pen1", "pen"},      {"wg1", "water glass"},
      {"key1", "house/car key"}, {"pil1", "pillow"},        {"tow1", "towel"},    {"db1", "dumbbell"},
      {"wine1", "wine glass"},  {"ban1", "banana"}};
  std::vector<ObjectRecord> out;
  for (const auto& [id, category] : spec) out.push_back(make_object(id, category, {{id + ".jpg", {0, 0, 10, 10}}}));
  return out;
}

AnnotationSet agreement_fixture() {
  AnnotationSet set;
  const std::vector<std::string> labels{"glass", "plastic", "metal"};
  auto add = [&](int example, const std::string& a, const std::string& b, const std::string& c) {
    const auto object = "obj" + std::to_string(example);
    for (const auto& [who, label] : {std::pair{"w1", a}, std::pair{"w2", b}, std::pair{"w3", c}})
      set.categorical.push_back({object, "material", label, who, Source::crowd});
  };
  int n = 0;
  for (int i = 0; i < 581; ++i, ++n) add(n, labels[i % 3], labels[i % 3], labels[i % 3]);
  for (int i = 0; i < 356; ++i, ++n) add(n, labels[i % 3], labels[(i + 1) % 3], labels[i % 3]);
  for (int i = 0; i < 63; ++i, ++n) add(n, labels[0], labels[1], labels[2]);
  return set;
}

BaselineFixture transparency_fixture() {
  BaselineFixture f;
  auto add_train = [&](int count, const std::string& label) {
    for (int i = 0; i < count; ++i)
      f.train.categorical.push_back({"train_" + label + std::to_string(i), "transparency", label, "auto",
                                     Source::automatic});
  };
  add_train(600, "opaque");
  add_train(150, "transparent");
  add_train(50, "translucent");
  auto add_test = [&](int count, const std::string& label) {
    for (int i = 0; i < count; ++i)
      f.test.categorical.push_back({"test_" + label + std::to_string(i), "transparency", label, "majority"});
  };
  add_test(776, "opaque");
  add_test(200, "transparent");
  add_test(24, "translucent");
  return f;
}

AnnotationJob synthetic_job(const std::string& id, const std::string& concept_name, std::uint64_t seed) {
  const auto& spec = ConceptRegistry::shipped().get(concept_name);
  const auto kind = spec.categorical() ? ItemKind::categorical : ItemKind::preference;
  auto object = [&](const std::string& name) {
    return ItemObject{name, spec.containers_only() ? "mug" : "toy", {name + ".jpg", {1, 2, 30, 40}}};
  };
  auto item = [&](const std::string& prefix, int i) {
    JobItem it{kind, {object(prefix + std::to_string(i) + "a")}};
    if (kind == ItemKind::preference) it.objects.push_back(object(prefix + std::to_string(i) + "b"));
    return it;
  };
  std::vector<JobItem> pool;
  for (int i = 0; i < static_cast<int>(kJobSize - kChecksPerJob); ++i) pool.push_back(item(id + "_p", i));
  std::vector<CheckItem> checks;
  for (int i = 0; i < static_cast<int>(kChecksPerJob); ++i)
    checks.push_back({item(id + "_c", i), kind == ItemKind::categorical ? spec.labels.front() : "first_higher"});
  return build_job(id, spec, pool, checks, seed);
}

Response correct_response(const AnnotationJob& job, std::size_t index) {
  Response r;
  const auto& truth = *job.truth(index);
  if (job.items()[index].kind == ItemKind::preference) {
    r.verdict = parse_verdict(truth);
    r.label = truth;
  } else {
    r.label = truth;
  }
  return r;
}

Response wrong_response(const AnnotationJob& job, std::size_t index) {
  Response r;
  if (job.items()[index].kind == ItemKind::preference) {
    r.verdict = flip(parse_verdict(*job.truth(index)));
    r.label = std::string(to_string(*r.verdict));
  } else {
    r.label = "unknown";
  }
  return r;
}

PlantedPreferences planted_preferences(int objects, int samples, std::uint64_t seed) {
  DeterministicRng rng(seed);
  PlantedPreferences out;
  for (int i = 0; i < objects; ++i) out.theta.push_back(1.5 * rng.normal());
  for (int k = 0; k < samples; ++k) {
    const auto a = rng.below(objects);
    auto b = rng.below(objects - 1);
    if (b >= a) ++b;
    // Drawn from the closed form, independent of the library's bt_probability.
    const double p = 1.0 / (1.0 + std::exp(out.theta[b] - out.theta[a]));
    const bool first = rng.bernoulli(p);
    out.examples.push_back({"o" + std::to_string(a), "o" + std::to_string(b), "mass", first ? 1.0 : 0.0});
  }
  return out;
}

PairAccuracy planted_pair_accuracy(const LatentScoreModel& model, const std::vector<double>& theta, double min_gap) {
  PairAccuracy r;
  for (std::size_t i = 0; i < theta.size(); ++i)
    for (std::size_t j = i + 1; j < theta.size(); ++j) {
      if (std::abs(theta[i] - theta[j]) < min_gap) continue;
      ++r.pairs;
      const double d = model.at("o" + std::to_string(i), "mass") - model.at("o" + std::to_string(j), "mass");
      r.correct += (d > 0) == (theta[i] > theta[j]);
    }
  return r;
}

std::vector<Dialogue> golden_dialogues(const std::string& golden_name) {
  const auto text = read_golden(golden_name);
  const auto begin = text.find("Scene 1:");
  const auto end = text.find("Scene 2:");
  std::istringstream in(text.substr(begin, end - begin));
  std::vector<Dialogue> out;
  std::string listing, line, turn, answers;
  bool in_answers = false;
  auto flush_turn = [&] {
    while (!turn.empty() && turn.back() == '\n') turn.pop_back();
    if (!turn.empty()) out.back().turns.push_back(turn);
    turn.clear();
  };
  const std::string listing_prefix = "The following objects are in the scene: ";
  while (std::getline(in, line)) {
    if (line.rfind(listing_prefix, 0) == 0) {
      listing = line.substr(listing_prefix.size());
      continue;
    }
    if (line.rfind("Instruction: ", 0) == 0) {
      if (!out.empty()) flush_turn();
      out.push_back({listing, line.substr(13), {}, {}});
      continue;
    }
    if (out.empty() || line.empty()) continue;
    if (line == "Answer:") {
      flush_turn();
      in_answers = true;
      answers.clear();
      continue;
    }
    if (in_answers && line.size() > 2 && line[1] == ':' && line[0] >= 'A' && line[0] <= 'Z') {
      answers += (answers.empty() ? "" : "\n") + line;
      continue;
    }
    if (in_answers) {
      out.back().answer_blocks.push_back(answers);
      in_answers = false;
    }
    turn += line + "\n";
  }
  flush_turn();
  return out;
}

}  // namespace physground::testing
