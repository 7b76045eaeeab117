#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fixtures.h"
#include "physground/errors.h"
#include "physground/grounding.h"
#include "physground/rng.h"

namespace physground {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

TEST(BradleyTerry, HandValues) {
  EXPECT_NEAR(bt_probability(0.0, 0.0), 0.5, 1e-12);
  EXPECT_NEAR(bt_probability(2.3, 2.3), 0.5, 1e-12);
  // s1 / (s1 + s2) with s1 = 3 s2.
  EXPECT_NEAR(bt_probability(std::log(3.0), 0.0), 0.75, 1e-12);
  EXPECT_NEAR(bt_probability(1.0, 1.0 + std::log(3.0)), 0.25, 1e-12);
  EXPECT_NEAR(bt_probability(1.2, -0.4) + bt_probability(-0.4, 1.2), 1.0, 1e-12);
}

TEST(BradleyTerry, Sentinels) {
  EXPECT_EQ(bt_probability(kInf, 3.0), 1.0);
  EXPECT_EQ(bt_probability(3.0, kInf), 0.0);
  EXPECT_EQ(bt_probability(-kInf, 3.0), 0.0);
  EXPECT_EQ(bt_probability(kInf, -kInf), 1.0);
  EXPECT_THROW(bt_probability(kInf, kInf), InvalidInput);
  EXPECT_THROW(bt_probability(std::nan(""), 0.0), InvalidInput);
}

TEST(BradleyTerry, ExtremeGapsStayFinite) {
  EXPECT_NEAR(bt_probability(800.0, 0.0), 1.0, 1e-12);
  EXPECT_NEAR(bt_probability(-800.0, 0.0), 0.0, 1e-12);
  LatentScoreModel m;
  m.l2_weight = 0;
  m.theta[{"a", "mass"}] = 800;
  m.theta[{"b", "mass"}] = 0;
  const std::vector<PreferenceExample> wrong{{"a", "b", "mass", 0.0}};
  EXPECT_NEAR(bce_loss(m, wrong), 800.0, 1e-9);
}

TEST(Bce, LossAtEqualityIsLn2) {
  LatentScoreModel m;
  m.l2_weight = 0;
  m.theta[{"a", "mass"}] = 0.7;
  m.theta[{"b", "mass"}] = 0.7;
  for (double y : {0.0, 0.5, 1.0}) {
    const std::vector<PreferenceExample> batch{{"a", "b", "mass", y}};
    EXPECT_NEAR(bce_loss(m, batch), std::log(2.0), 1e-12);
  }
}

TEST(Bce, HandValue) {
  LatentScoreModel m;
  m.l2_weight = 0.01;
  m.theta[{"a", "mass"}] = std::log(3.0);
  m.theta[{"b", "mass"}] = 0;
  const std::vector<PreferenceExample> batch{{"a", "b", "mass", 1.0}, {"b", "a", "mass", 1.0}};
  const double expected = (-std::log(0.75) - std::log(0.25)) / 2 + 0.01 * std::log(3.0) * std::log(3.0);
  EXPECT_NEAR(bce_loss(m, batch), expected, 1e-12);
}

TEST(Bce, GradientMatchesFiniteDifferences) {
  DeterministicRng rng(2024);
  for (int instance = 0; instance < 100; ++instance) {
    LatentScoreModel m;
    m.l2_weight = 0.01 * rng.uniform();
    const int n_obj = 2 + static_cast<int>(rng.below(5));
    for (int i = 0; i < n_obj; ++i) m.theta[{"o" + std::to_string(i), "mass"}] = 3.0 * rng.normal();
    std::vector<PreferenceExample> batch;
    for (int k = 0; k < 6; ++k) {
      const auto a = rng.below(n_obj);
      auto b = rng.below(n_obj - 1);
      if (b >= a) ++b;
      const double y = rng.below(3) / 2.0;
      batch.push_back({"o" + std::to_string(a), "o" + std::to_string(b), "mass", y});
    }
    const auto grad = bce_gradient(m, batch);
    for (const auto& [key, g] : grad) {
      const double h = 1e-5;
      auto plus = m, minus = m;
      plus.theta[key] += h;
      minus.theta[key] -= h;
      const double fd = (bce_loss(plus, batch) - bce_loss(minus, batch)) / (2 * h);
      const double scale = std::max(std::abs(fd), 1e-3);
      EXPECT_LT(std::abs(g - fd) / scale, 1e-5) << "instance " << instance;
    }
  }
}

TEST(Examples, VerdictTargets) {
  std::vector<PreferenceAnnotation> a{{"x", "y", "mass", Verdict::first_higher, "w"},
                                      {"x", "y", "mass", Verdict::second_higher, "w"},
                                      {"x", "y", "mass", Verdict::equal, "w"},
                                      {"x", "y", "mass", Verdict::unclear, "w"}};
  const auto ex = to_examples(a);
  ASSERT_EQ(ex.size(), 3u);
  EXPECT_EQ(ex[0].target_first, 1.0);
  EXPECT_EQ(ex[1].target_first, 0.0);
  EXPECT_EQ(ex[2].target_first, 0.5);
}

TEST(Fit, RecoversPlantedOrder) {
  const auto planted = testing::planted_preferences(50, 2000, 17);
  FitConfig config;
  config.learning_rate = 20.0;
  config.steps = 1500;
  const auto result = fit(planted.examples, config);
  EXPECT_TRUE(result.model.centered);
  EXPECT_LT(result.loss_history.back(), result.loss_history.front());
  const auto acc = testing::planted_pair_accuracy(result.model, planted.theta, 1.0);
  ASSERT_GT(acc.pairs, 100u);
  EXPECT_GE(acc.accuracy(), 0.90);
}

TEST(Fit, DeterministicAndCentered) {
  const auto examples = testing::planted_preferences(10, 200, 5).examples;
  FitConfig config;
  config.steps = 50;
  config.seed = 3;
  const auto a = fit(examples, config);
  const auto b = fit(examples, config);
  EXPECT_EQ(a.model.theta, b.model.theta);
  double sum = 0;
  for (const auto& [k, v] : a.model.theta) sum += v;
  EXPECT_NEAR(sum, 0.0, 1e-9);
  EXPECT_EQ(a.loss_history.size(), 51u);
}

TEST(Fit, DivergenceAndBadInput) {
  const auto examples = testing::planted_preferences(10, 200, 5).examples;
  FitConfig config;
  config.l2_weight = 1.0;
  config.learning_rate = 1e4;
  config.steps = 100;
  EXPECT_THROW(fit(examples, config), DivergenceError);
  EXPECT_THROW(fit(std::vector<PreferenceExample>{}, FitConfig{}), InvalidInput);
  EXPECT_THROW(fit(std::vector<PreferenceExample>{{"a", "a", "mass", 1.0}}, FitConfig{}), InvalidInput);
}

TEST(ModelIo, RoundTrip) {
  LatentScoreModel m;
  m.theta[{"a", "mass"}] = 0.125;
  m.theta[{"b", "fragility"}] = -3.5;
  EXPECT_EQ(read_model(write_model(m)).theta, m.theta);
}

TEST(Predictors, CategoricalArgmaxAndTies) {
  const auto& spec = ConceptRegistry::shipped().get("transparency");
  auto dist = [](double transparent, double translucent, double opaque) {
    return AnswerDistribution(
        {{"transparent", transparent}, {"translucent", translucent}, {"opaque", opaque}, {"unknown", 0.05}}, false);
  };
  EXPECT_EQ(predict_categorical(dist(0.3, 0.1, 0.6), spec), "opaque");
  // Exact tie goes to the earlier registry label.
  EXPECT_EQ(predict_categorical(dist(0.1, 0.4, 0.4), spec), "translucent");
  EXPECT_THROW(predict_categorical(AnswerDistribution({{"opaque", 0.6}}, false), spec), InvalidInput);
}

TEST(Predictors, PreferenceFromScores) {
  const auto a = concept_score(AnswerDistribution({{"yes", 0.6}, {"no", 0.2}}, false));
  const auto b = concept_score(AnswerDistribution({{"yes", 0.3}, {"no", 0.3}}, false));
  EXPECT_EQ(predict_preference(a, b).verdict, Verdict::first_higher);
  EXPECT_EQ(predict_preference(b, a).verdict, Verdict::second_higher);
  EXPECT_TRUE(predict_preference(a, a).tie);
}

TEST(Evaluate, MostCommonBaseline) {
  AnnotationSet train;
  for (int i = 0; i < 7; ++i) train.categorical.push_back({"t" + std::to_string(i), "transparency", "opaque", "w"});
  for (int i = 0; i < 3; ++i) train.categorical.push_back({"u" + std::to_string(i), "transparency", "transparent", "w"});
  auto baseline = most_common_baseline(train);
  EXPECT_EQ(baseline.modal_labels().at("transparency"), "opaque");
  GoldSet gold;
  for (int i = 0; i < 4; ++i) gold.categorical.push_back({"g" + std::to_string(i), "transparency", i ? "opaque" : "translucent", "w"});
  gold.preference.push_back({"a", "b", "mass", Verdict::first_higher, "w"});
  gold.preference.push_back({"a", "b", "mass", Verdict::equal, "w"});
  const auto r = evaluate(baseline, gold);
  EXPECT_NEAR(r.per_concept_accuracy.at("transparency"), 0.75, 1e-12);
  EXPECT_NEAR(r.per_concept_accuracy.at("mass"), 0.5, 1e-12);
  EXPECT_EQ(r.counts.at("mass"), 1u);
  EXPECT_NEAR(r.average, 0.625, 1e-12);
  const auto table = format_report_table(r);
  EXPECT_NE(table.find("Transparency"), std::string::npos);
  EXPECT_NE(table.find("0.750"), std::string::npos);
}

TEST(Evaluate, OraclePredictorWithMock) {
  GroundTruth t;
  t["a"].continuous["mass"] = 2.0;
  t["b"].continuous["mass"] = -1.0;
  t["a"].categorical["material"] = "metal";
  MockOracle oracle(t);
  OraclePredictor p(oracle);
  const auto& registry = ConceptRegistry::shipped();
  EXPECT_EQ(p.predict_label("a", registry.get("material")), "metal");
  EXPECT_EQ(p.preference_probability("a", "b", registry.get("mass")), 1.0);
  EXPECT_EQ(p.preference_probability("b", "a", registry.get("mass")), 0.0);
}

TEST(Evaluate, LatentPredictorPicksHigherTheta) {
  LatentScoreModel m;
  m.theta[{"a", "mass"}] = std::log(3.0);
  m.theta[{"b", "mass"}] = 0.0;
  LatentModelPredictor p(m);
  const auto& mass = ConceptRegistry::shipped().get("mass");
  EXPECT_EQ(p.preference_probability("a", "b", mass), 1.0);
  EXPECT_EQ(p.preference_probability("b", "a", mass), 0.0);
}

}  // namespace
}  // namespace physground
