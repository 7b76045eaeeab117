#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "fixtures.h"
#include "physground/datapipe.h"
#include "physground/errors.h"
#include "physground/kvdoc.h"
#include "physground/records_io.h"

namespace physground {
namespace {

using testing::agreement_fixture;
using testing::correct_response;
using testing::read_golden;
using testing::roster10;
using testing::synthetic_job;
using testing::wrong_response;

std::set<std::string> categories(const std::string& list) {
  std::set<std::string> out;
  for (auto& c : split_list(list)) out.insert(c);
  return out;
}

// Golden rows: "concept | label-or-tier | categories".
std::vector<std::vector<std::string>> golden_rows(const std::string& name) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_golden(name));
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto parts = split_list(line, '|');
    EXPECT_EQ(parts.size(), 3u) << line;
    rows.push_back(parts);
  }
  return rows;
}

TEST(Tables, TiersMatchGolden) {
  const auto& t = TierTable::shipped();
  const auto rows = golden_rows("auto_tiers.txt");
  ASSERT_EQ(rows.size(), 6u);
  for (const auto& r : rows) {
    const auto& tiers = t.concepts.at(r[0]);
    EXPECT_EQ(r[1] == "high" ? tiers.high : tiers.low, categories(r[2])) << r[0] << " " << r[1];
  }
  EXPECT_EQ(t.concepts.size(), 3u);
}

TEST(Tables, LabelsMatchGolden) {
  const auto& t = CategoryLabelTable::shipped();
  const auto rows = golden_rows("auto_labels.txt");
  std::size_t labels = 0;
  for (const auto& [c, by_label] : t.concepts) labels += by_label.size();
  EXPECT_EQ(labels, rows.size());
  for (const auto& r : rows) EXPECT_EQ(t.concepts.at(r[0]).at(r[1]), categories(r[2])) << r[0] << " " << r[1];
}

TEST(Tables, RejectContradictions) {
  EXPECT_THROW(TierTable::parse("schema = physground.tiers\nversion = 1\n[tier mass]\nhigh = a, b\nlow = b\n"),
               InvalidInput);
  EXPECT_THROW(CategoryLabelTable::parse(
                   "schema = physground.labels\nversion = 1\n[labels material]\nglass = cup\nmetal = cup\n"),
               InvalidInput);
}

TEST(AutoAnnotate, RosterCounts) {
  const auto objects = roster10();
  const auto set = auto_annotate(objects, TierTable::shipped(), CategoryLabelTable::shipped());
  std::map<std::string, int> pref, cat;
  for (const auto& p : set.preference) {
    ++pref[p.concept_name];
    EXPECT_EQ(p.verdict, Verdict::first_higher);
    EXPECT_EQ(p.source, Source::automatic);
  }
  for (const auto& c : set.categorical) ++cat[c.concept_name];
  // mass: 2 high x 7 low; fragility: 2 x 2; deformability: 2 x 6.
  EXPECT_EQ(pref["mass"], 14);
  EXPECT_EQ(pref["fragility"], 4);
  EXPECT_EQ(pref["deformability"], 12);
  EXPECT_EQ(set.preference.size(), 30u);
  EXPECT_EQ(cat["material"], 4);
  EXPECT_EQ(cat["transparency"], 6);
  EXPECT_EQ(cat["can_contain_liquid"], 2);
  EXPECT_EQ(cat["is_sealed"], 2);
  EXPECT_EQ(set.categorical.size(), 14u);
  for (const auto& p : set.preference)
    if (p.concept_name == "fragility") EXPECT_TRUE(p.first == "tv1" || p.first == "wg1");
}

TEST(AutoAnnotate, OverridesStayAutomatic) {
  std::vector<ObjectRecord> objects{make_object("k", "tin can", {{"i", {0, 0, 1, 1}}})};
  auto set = auto_annotate(objects, TierTable::shipped(), CategoryLabelTable::shipped());
  const auto overrides = read_overrides(R"({"object": "k", "concept": "material", "label": " Aluminium "})");
  EXPECT_EQ(apply_overrides(set, overrides), 1u);
  for (const auto& a : set.categorical) {
    if (a.concept_name != "material") continue;
    EXPECT_EQ(a.label, "aluminium");
    EXPECT_EQ(a.source, Source::automatic);
    EXPECT_TRUE(a.overridden);
  }
}

TEST(SamplePairs, CountsAndUniqueness) {
  std::vector<ObjectRecord> objects;
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 10; ++i)
      objects.push_back(make_object("c" + std::to_string(c) + "_" + std::to_string(i), "cat" + std::to_string(c),
                                    {{"i", {0, 0, 1, 1}}}));
  const auto& mass = ConceptRegistry::shipped().get("mass");
  const auto s = sample_pairs(objects, mass, 100, 0.3, 9);
  EXPECT_EQ(s.pairs.size(), 100u);
  EXPECT_EQ(s.same_category, 30u);
  std::set<std::pair<std::string, std::string>> seen;
  int same = 0;
  for (auto [a, b] : s.pairs) {
    EXPECT_NE(a, b);
    if (a.substr(0, 2) == b.substr(0, 2)) ++same;
    if (b < a) std::swap(a, b);
    EXPECT_TRUE(seen.insert({a, b}).second);
  }
  EXPECT_EQ(same, 30);
  EXPECT_EQ(sample_pairs(objects, mass, 100, 0.3, 9).pairs, s.pairs);
}

TEST(SamplePairs, ShortSameCategoryWarns) {
  std::vector<ObjectRecord> objects;
  for (int i = 0; i < 6; ++i)
    objects.push_back(make_object("o" + std::to_string(i), i < 2 ? "a" : "b" + std::to_string(i), {{"i", {0, 0, 1, 1}}}));
  const auto s = sample_pairs(objects, ConceptRegistry::shipped().get("mass"), 10, 0.5, 1);
  EXPECT_EQ(s.same_category, 1u);
  EXPECT_EQ(s.pairs.size(), 6u);  // 1 same + 5 cross
  EXPECT_FALSE(s.warnings.empty());
}

TEST(Jobs, LayoutAndRoundTrip) {
  const auto job = synthetic_job("j1", "material", 3);
  EXPECT_EQ(job.size(), kJobSize);
  EXPECT_EQ(job.check_positions().size(), kChecksPerJob);
  const auto again = synthetic_job("j1", "material", 3);
  EXPECT_EQ(again.check_positions(), job.check_positions());
  EXPECT_EQ(AnnotationJob::from_json(job.to_json()).to_json(), job.to_json());
  // Pool items keep their order around the checks.
  std::size_t next = 0;
  for (std::size_t i = 0; i < job.size(); ++i) {
    if (job.is_check(i)) continue;
    EXPECT_EQ(job.items()[i].objects[0].instance_id, "j1_p" + std::to_string(next++) + "a");
  }
}

TEST(Jobs, ShortPoolsRejected) {
  const auto& spec = ConceptRegistry::shipped().get("material");
  std::vector<JobItem> pool(10, JobItem{ItemKind::categorical, {{"o", "cup", {"i", {0, 0, 1, 1}}}}});
  EXPECT_THROW(build_job("j", spec, pool, {}, 1), InvalidInput);
}

AnnotatorScore score_with(const AnnotationJob& job, int correct_checks) {
  std::vector<Response> responses;
  int given = 0;
  for (std::size_t i = 0; i < job.size(); ++i) {
    if (!job.is_check(i)) {
      responses.push_back({"plastic", std::nullopt, false});
    } else {
      responses.push_back(given++ < correct_checks ? correct_response(job, i) : wrong_response(job, i));
    }
  }
  return score_annotator(job, responses);
}

TEST(Score, ThresholdIsExact) {
  const auto job = synthetic_job("j2", "material", 5);
  const auto keep = score_with(job, 20);
  EXPECT_EQ(keep.correct, 20u);
  EXPECT_DOUBLE_EQ(keep.accuracy, 0.80);
  EXPECT_TRUE(keep.keep);
  const auto drop = score_with(job, 19);
  EXPECT_DOUBLE_EQ(drop.accuracy, 0.76);
  EXPECT_FALSE(drop.keep);
}

TEST(Score, PreferenceChecksNeedDirection) {
  const auto job = synthetic_job("j3", "mass", 5);
  std::vector<Response> responses;
  for (std::size_t i = 0; i < job.size(); ++i)
    responses.push_back({"equal", Verdict::equal, false});
  EXPECT_EQ(score_annotator(job, responses).correct, 0u);
  EXPECT_EQ(score_with(job, 25).correct, 25u);
}

TEST(Score, JobAnnotationsSkipChecks) {
  const auto job = synthetic_job("j4", "mass", 2);
  std::vector<Response> responses;
  for (std::size_t i = 0; i < job.size(); ++i) responses.push_back({"second_higher", Verdict::second_higher, false});
  const auto set = job_annotations(job, responses, "w9");
  EXPECT_EQ(set.preference.size(), kJobSize - kChecksPerJob);
  EXPECT_EQ(set.preference[0].annotator, "w9");
  EXPECT_EQ(set.preference[0].source, Source::crowd);
}

TEST(Agreement, ReferenceComposition) {
  const auto gold = majority_filter(agreement_fixture(), 3);
  EXPECT_EQ(gold.stats.examples, 1000u);
  EXPECT_EQ(gold.stats.majority, 937u);
  EXPECT_EQ(gold.stats.unanimous, 581u);
  EXPECT_DOUBLE_EQ(gold.stats.majority_fraction(), 0.937);
  EXPECT_DOUBLE_EQ(gold.stats.unanimous_fraction(), 0.581);
  EXPECT_EQ(gold.categorical.size(), 937u);
  const auto report = agreement_report(gold.stats);
  EXPECT_NE(report.find("93.7"), std::string::npos);
  EXPECT_NE(report.find("58.1"), std::string::npos);
}

TEST(Agreement, PairsAreOrderInsensitiveAndUnclearNeverGold) {
  AnnotationSet set;
  set.preference.push_back({"a", "b", "mass", Verdict::first_higher, "w1"});
  set.preference.push_back({"b", "a", "mass", Verdict::second_higher, "w2"});
  set.preference.push_back({"a", "b", "mass", Verdict::equal, "w3"});
  set.preference.push_back({"c", "d", "mass", Verdict::unclear, "w1"});
  set.preference.push_back({"c", "d", "mass", Verdict::unclear, "w2"});
  set.preference.push_back({"c", "d", "mass", Verdict::first_higher, "w3"});
  set.preference.push_back({"e", "f", "mass", Verdict::first_higher, "w3"});  // too few
  const auto gold = majority_filter(set, 3);
  EXPECT_EQ(gold.stats.examples, 2u);
  EXPECT_EQ(gold.stats.majority, 2u);
  ASSERT_EQ(gold.preference.size(), 1u);
  EXPECT_EQ(gold.preference[0].verdict, Verdict::first_higher);
  EXPECT_EQ(gold.stats.diagnostics.size(), 1u);
}

AnnotationSet sized(std::size_t n) {
  AnnotationSet s;
  for (std::size_t i = 0; i < n; ++i) s.categorical.push_back({"o" + std::to_string(i), "material", "glass", "w"});
  return s;
}

TEST(Sampler, SquareRootLaw) {
  BalancedSampler sampler({{"small", sized(100)}, {"large", sized(400)}}, 77);
  EXPECT_NEAR(sampler.probabilities()[1], 2.0 / 3.0, 1e-12);
  int large = 0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const auto s = sampler.next();
    ASSERT_LT(s.index, s.subdataset ? 400u : 100u);
    large += s.subdataset == 1;
  }
  EXPECT_NEAR(static_cast<double>(large) / draws, 2.0 / 3.0, 0.01);
  EXPECT_THROW(BalancedSampler({{"empty", {}}}, 1), InvalidInput);
}

TEST(Bbox, PicksMostVisible) {
  const auto o = make_object("g", "guitar", {{"a", {0, 0, 2, 2}}, {"b", {0, 0, 5, 5}}, {"c", {0, 0, 5, 5}}});
  EXPECT_EQ(select_bbox(o).image_ref, "b");
  auto scorer = [](const ObjectRecord&, const BoundingBox& b) { return b.image_ref == "a" ? 1.0 : 0.0; };
  EXPECT_EQ(select_bbox(o, scorer).image_ref, "a");
}

TEST(Checks, DrawnFromAutomaticAnnotations) {
  const auto objects = roster10();
  const auto set = auto_annotate(objects, TierTable::shipped(), CategoryLabelTable::shipped());
  std::map<std::string, ObjectRecord> by_id;
  for (const auto& o : objects) by_id[o.instance_id] = o;
  const auto checks = checks_from_annotations(set, ConceptRegistry::shipped().get("mass"), by_id, 5, 1);
  ASSERT_EQ(checks.size(), 5u);
  for (const auto& c : checks) {
    EXPECT_EQ(c.item.kind, ItemKind::preference);
    EXPECT_EQ(c.truth, "first_higher");
  }
  EXPECT_THROW(checks_from_annotations(set, ConceptRegistry::shipped().get("mass"), by_id, 50, 1), InvalidInput);
}

}  // namespace
}  // namespace physground
