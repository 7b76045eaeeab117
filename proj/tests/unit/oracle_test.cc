#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include "physground/errors.h"
#include "physground/oracle.h"

namespace physground {
namespace {

AnswerDistribution yn(double yes, double no) { return AnswerDistribution({{"yes", yes}, {"no", no}}, false); }

TEST(AnswerDistribution, Invariants) {
  EXPECT_THROW(AnswerDistribution({}, false), InvalidInput);
  EXPECT_THROW(AnswerDistribution({{"yes", 0.5}, {"Yes", 0.5}}, true), InvalidInput);
  EXPECT_THROW(AnswerDistribution({{"yes", -0.1}}, false), InvalidInput);
  EXPECT_THROW(AnswerDistribution({{"yes", 0.5}, {"no", 0.4}}, true), InvalidInput);
  EXPECT_NO_THROW(AnswerDistribution({{"yes", 0.5}, {"no", 0.4}}, false));
  const auto d = AnswerDistribution({{"yes", 0.2}, {"no", 0.6}}, false).renormalized();
  EXPECT_TRUE(d.normalized());
  EXPECT_NEAR(*d.probability("YES"), 0.25, 1e-12);
}

TEST(AnswerDistribution, RankedTiesAlphabetical) {
  const AnswerDistribution d({{"unknown", 0.2}, {"Yes", 0.4}, {"no", 0.4}}, true);
  const auto r = d.ranked();
  EXPECT_EQ(r[0].answer, "no");
  EXPECT_EQ(r[1].answer, "Yes");
  EXPECT_EQ(r[2].answer, "unknown");
}

TEST(ConceptScore, HandValues) {
  const auto s = concept_score(yn(0.8, 0.1));
  EXPECT_NEAR(s.score, 8.0, 1e-12);
  EXPECT_NEAR(s.log_score, std::log(8.0), 1e-9);
  EXPECT_NEAR(concept_score(yn(0.3, 0.3)).score, 1.0, 1e-12);
  EXPECT_NEAR(concept_score(yn(0.3, 0.3)).log_score, 0.0, 1e-12);
  EXPECT_NEAR(concept_score(yn(0.4, 0.05)).score, concept_score(yn(0.8, 0.1)).score, 1e-12);
}

TEST(ConceptScore, Sentinels) {
  const auto inf = concept_score(yn(0.5, 0.0));
  EXPECT_TRUE(inf.infinite);
  EXPECT_TRUE(std::isinf(inf.score));
  const auto zero = concept_score(yn(0.0, 0.5));
  EXPECT_TRUE(zero.zero);
  EXPECT_EQ(zero.score, 0.0);
  EXPECT_THROW(concept_score(yn(0.0, 0.0)), InvalidInput);
  EXPECT_THROW(concept_score(AnswerDistribution({{"yes", 1.0}}, true)), InvalidInput);
}

TEST(ConceptScore, MonotoneInYesAntitoneInNo) {
  double prev = -1;
  for (double y = 0.05; y < 1.0; y += 0.05) {
    const double s = concept_score(yn(y, 0.3)).score;
    EXPECT_GT(s, prev);
    prev = s;
  }
  prev = 1e300;
  for (double n = 0.05; n < 1.0; n += 0.05) {
    const double s = concept_score(yn(0.3, n)).score;
    EXPECT_LT(s, prev);
    prev = s;
  }
}

TEST(Template, ExactWrapping) {
  EXPECT_EQ(answer_prompt_template("Is this object heavy?"),
            "Question: Is this object heavy? Respond unknown if you are not sure. Short answer:");
  EXPECT_EQ(answer_prompt_template(""), "Question:  Respond unknown if you are not sure. Short answer:");
  EXPECT_EQ(lint_question("").size(), 1u);
  EXPECT_TRUE(lint_question("Is it?").empty());
  const auto twice = answer_prompt_template(answer_prompt_template("q"));
  EXPECT_EQ(twice, "Question: Question: q Respond unknown if you are not sure. Short answer: Respond unknown if you "
                   "are not sure. Short answer:");
  EXPECT_EQ(strip_answer_template(answer_prompt_template("Is this object heavy?")), "Is this object heavy?");
  EXPECT_EQ(strip_answer_template("plain"), "plain");
}

TEST(Routing, Keywords) {
  using K = QuestionRoute::Kind;
  EXPECT_EQ(route_question("Is this object heavy?").concept_name, "mass");
  EXPECT_TRUE(route_question("Is this object light?").negated);
  EXPECT_EQ(route_question("Is this object a container?").kind, K::container_yes_no);
  auto r = route_question("Is this object not plastic?");
  EXPECT_EQ(r.kind, K::label_yes_no);
  EXPECT_EQ(r.label, "plastic");
  EXPECT_TRUE(r.negated);
  EXPECT_EQ(route_question("Can this object be used to carry water?").concept_name, "can_contain_liquid");
  r = route_question("Is this object empty?");
  EXPECT_EQ(r.concept_name, "contents");
  EXPECT_EQ(r.label, "nothing");
  r = route_question("Does this object contain metals?");
  EXPECT_EQ(r.concept_name, "contents");
  EXPECT_EQ(r.label, "metal");
  EXPECT_EQ(route_question("What material is this object made of?").kind, K::label_open);
  EXPECT_EQ(route_question("Is this object translucent?").label, "translucent");
  EXPECT_EQ(route_question("What is the meaning of life?").kind, K::unknown);
}

GroundTruth truth() {
  GroundTruth t;
  PropertyTable glass;
  glass.categorical["material"] = "glass";
  glass.continuous["mass"] = 1.0;
  glass.continuous["fragility"] = 2.0;
  glass.container = true;
  t["g"] = glass;
  PropertyTable key;
  key.categorical["material"] = "metal";
  key.continuous["mass"] = -1.0;
  key.continuous["fragility"] = -2.0;
  t["k"] = key;
  return t;
}

TEST(MockOracle, ZeroNoiseFollowsTruth) {
  MockOracle o(truth());
  const auto d = o.query({"g", std::nullopt, "What material is this object made of?", {}});
  const double glass = *d.probability("glass");
  for (const auto& e : d.entries()) EXPECT_LE(e.probability, glass);
  const auto h = o.query({"g", std::nullopt, "Is this object heavy?", {}});
  const double sig = 1.0 / (1.0 + std::exp(-1.0));
  EXPECT_NEAR(*h.probability("yes"), 0.9 * sig, 1e-12);
  EXPECT_NEAR(*h.probability("no"), 0.9 * (1 - sig), 1e-12);
  EXPECT_NEAR(concept_score(h).log_score, 1.0, 1e-9);
  const auto c = o.query({"g", std::nullopt, "Is this object heavy?", {"yes", "no"}});
  EXPECT_EQ(c.entries().size(), 2u);
  EXPECT_FALSE(c.normalized());
  EXPECT_NEAR(*c.probability("yes"), 0.9 * sig, 1e-12);
  EXPECT_THROW(o.query({"zzz", std::nullopt, "Is this object heavy?", {}}), NotFound);
}

TEST(MockOracle, RanksLikeTruthAtZeroNoise) {
  MockOracle o(truth());
  for (const auto* q : {"Is this object heavy?", "Is this object fragile?"}) {
    const auto g = concept_score(o.query({"g", std::nullopt, q, {}}));
    const auto k = concept_score(o.query({"k", std::nullopt, q, {}}));
    EXPECT_GT(g.score, k.score) << q;
  }
}

TEST(MockOracle, TemplateIsTransparent) {
  MockOracle o(truth(), {0.3, 0.5, 9});
  EXPECT_EQ(o.query({"g", std::nullopt, "Is this object heavy?", {}}),
            o.query({"g", std::nullopt, answer_prompt_template("Is this object heavy?"), {}}));
}

TEST(MockOracle, NoiseIsSeededPerQuestion) {
  MockOracle a(truth(), {0.5, 0.0, 1}), b(truth(), {0.5, 0.0, 1});
  int flips = 0;
  for (int i = 0; i < 200; ++i) {
    const std::string q = "Is this object heavy? #" + std::to_string(i);
    EXPECT_EQ(a.query({"g", std::nullopt, q, {}}), b.query({"g", std::nullopt, q, {}}));
    flips += concept_score(a.query({"g", std::nullopt, q, {}})).log_score < 0;
  }
  EXPECT_GT(flips, 60);
  EXPECT_LT(flips, 140);
  EXPECT_THROW(MockOracle(truth(), {1.5, 0, 0}), InvalidInput);
}

TEST(MockOracle, ConcurrentQueriesAgree) {
  MockOracle o(truth(), {0.2, 0.3, 4});
  const auto expected = o.query({"g", std::nullopt, "Is this object fragile?", {}});
  std::vector<std::thread> threads;
  std::atomic<int> mismatches{0};
  for (int t = 0; t < 4; ++t)
    threads.emplace_back([&] {
      for (int i = 0; i < 200; ++i)
        if (!(o.query({"g", std::nullopt, "Is this object fragile?", {}}) == expected)) ++mismatches;
    });
  for (auto& t : threads) t.join();
  EXPECT_EQ(mismatches.load(), 0);
}

TEST(ScriptedOracle, ReplaysInOrderOnce) {
  const AnswerDistribution a({{"no", 0.50}, {"yes", 0.24}, {"unknown", 0.21}}, false);
  const AnswerDistribution b({{"yes", 0.6}, {"no", 0.3}}, false);
  ScriptedOracle o({{"A", "Is this object heavy?", a}, {"A", "Is this object heavy?", b}});
  EXPECT_EQ(o.query({"A", std::nullopt, "Is this object heavy?", {}}), a);
  EXPECT_EQ(*o.query({"A", std::nullopt, "Is this object heavy?", {}}).probability("yes"), 0.6);
  EXPECT_EQ(o.remaining(), 0u);
  EXPECT_THROW(o.query({"A", std::nullopt, "Is this object heavy?", {}}), NotFound);
}

}  // namespace
}  // namespace physground
