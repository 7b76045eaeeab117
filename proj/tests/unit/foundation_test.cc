#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "physground/concepts.h"
#include "physground/errors.h"
#include "physground/kvdoc.h"
#include "physground/records_io.h"
#include "physground/rng.h"
#include "physground/shipped_data.h"

namespace physground {
namespace {

TEST(Rng, Fnv1aKnownVectors) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
}

TEST(Rng, SplitMixReferenceSequence) {
  // Reference outputs of SplitMix64 seeded with 0.
  DeterministicRng rng(0);
  EXPECT_EQ(rng.next_u64(), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(rng.next_u64(), 0x6e789e6aa1b965f4ULL);
  EXPECT_EQ(rng.next_u64(), 0x06c45d188009454fULL);
}

TEST(Rng, StreamsAreReproducible) {
  DeterministicRng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.uniform(), b.uniform());
}

TEST(Rng, BelowStaysInRangeAndCoversIt) {
  DeterministicRng rng(7);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto v = rng.below(10);
    ASSERT_LT(v, 10u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 10u);
}

TEST(Rng, NormalMoments) {
  DeterministicRng rng(3);
  double sum = 0, sq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.03);
  EXPECT_NEAR(sq / n, 1.0, 0.05);
}

TEST(Rng, ShuffleIsAPermutation) {
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  DeterministicRng rng(11);
  rng.shuffle(std::span<int>(v));
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_FALSE(std::is_sorted(v.begin(), v.end()));
}

TEST(KvDoc, ParsesSectionsAndRoot) {
  const auto doc = parse_kv("# c\nschema = x\nversion = 1\n\n[object a b]\nk = v = w\nflag = yes\n[object c]\n", "t");
  EXPECT_EQ(doc.root.get("schema"), "x");
  ASSERT_EQ(doc.sections.size(), 2u);
  EXPECT_EQ(doc.sections[0].argument, "a b");
  EXPECT_EQ(doc.sections[0].get("k"), "v = w");
  EXPECT_TRUE(doc.sections[0].get_bool("flag", false));
  EXPECT_EQ(doc.all("object").size(), 2u);
  EXPECT_NO_THROW(doc.expect_schema("x", 1));
  EXPECT_THROW(doc.expect_schema("y", 1), InvalidInput);
}

TEST(KvDoc, ReportsLineNumbers) {
  try {
    parse_kv("a = 1\nnot a pair\n", "file.conf");
    FAIL();
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("file.conf:2"), std::string::npos) << e.what();
  }
}

TEST(KvDoc, Helpers) {
  EXPECT_EQ(trim("  a b \t"), "a b");
  EXPECT_EQ(to_lower("AbC"), "abc");
  EXPECT_EQ(split_list(" a, b ,,c "), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(join({"a", "b"}, "; "), "a; b");
}

TEST(Registry, ShippedConcepts) {
  const auto& r = ConceptRegistry::shipped();
  std::vector<std::string> names;
  for (const auto& c : r.concepts()) names.push_back(c.name);
  EXPECT_EQ(names, (std::vector<std::string>{"mass", "fragility", "deformability", "density", "liquid_capacity",
                                             "material", "transparency", "contents", "can_contain_liquid",
                                             "is_sealed"}));
  EXPECT_TRUE(r.get("density").held_out);
  EXPECT_TRUE(r.get("liquid_capacity").held_out);
  EXPECT_FALSE(r.get("mass").held_out);
  EXPECT_TRUE(r.get("contents").containers_only());
  EXPECT_EQ(r.get("transparency").labels,
            (std::vector<std::string>{"transparent", "translucent", "opaque", "unknown"}));
  EXPECT_EQ(r.get("material").labels.back(), "unknown");
  EXPECT_THROW(r.get("colour"), NotFound);
}

TEST(Registry, SerializeRoundTrip) {
  const auto& r = ConceptRegistry::shipped();
  EXPECT_EQ(ConceptRegistry::parse(r.serialize()), r);
}

TEST(Registry, RejectsBadDocuments) {
  EXPECT_THROW(ConceptRegistry::parse("schema = physground.registry\nversion = 1\n[concept a]\nkind = odd\n"),
               InvalidInput);
}

TEST(Concepts, PromptsUseCategoryAndPlural) {
  const auto& r = ConceptRegistry::shipped();
  const auto glass = make_object("g1", "water glass", {{"img", {0, 0, 1, 1}}});
  EXPECT_EQ(prompt_for(r.get("mass"), glass, false), "Is this object heavy?");
  EXPECT_EQ(prompt_for(r.get("mass"), glass, true), "Is this water glass heavy?");
  const auto keys = make_object("k1", "keys", {{"img", {0, 0, 1, 1}}});
  EXPECT_EQ(prompt_for(r.get("fragility"), keys, true), "Are these keys fragile?");
  const auto cup = make_object("c1", "mug", {{"img", {0, 0, 1, 1}}});
  EXPECT_TRUE(cup.is_container);
  EXPECT_THROW(prompt_for(r.get("contents"), keys, true), InvalidInput);
}

TEST(Concepts, OpenEndedLabelsNormalized) { EXPECT_EQ(normalize_label("  Rubber "), "rubber"); }

TEST(Concepts, ValidateAnnotations) {
  const auto& r = ConceptRegistry::shipped();
  EXPECT_NO_THROW(validate(CategoricalAnnotation{"o", "material", "glass", "a"}, r));
  EXPECT_NO_THROW(validate(CategoricalAnnotation{"o", "material", "rubber", "a"}, r));  // open-ended allowed
  EXPECT_THROW(validate(CategoricalAnnotation{"o", "transparency", "shiny", "a"}, r), InvalidInput);
  EXPECT_THROW(validate(CategoricalAnnotation{"o", "mass", "heavy", "a"}, r), InvalidInput);
  EXPECT_THROW(validate(PreferenceAnnotation{"o", "o", "mass", Verdict::equal, "a"}, r), InvalidInput);
  std::map<std::string, ObjectRecord> objects{{"k", make_object("k", "keys", {{"i", {0, 0, 1, 1}}})}};
  EXPECT_THROW(validate(CategoricalAnnotation{"k", "contents", "water", "a"}, r, &objects), InvalidInput);
}

TEST(Concepts, VerdictFlip) {
  EXPECT_EQ(flip(Verdict::first_higher), Verdict::second_higher);
  EXPECT_EQ(flip(Verdict::equal), Verdict::equal);
  EXPECT_EQ(parse_verdict(to_string(Verdict::unclear)), Verdict::unclear);
}

TEST(Split, StratifiedAndDeterministic) {
  std::vector<ObjectRecord> objects;
  for (int c = 0; c < 5; ++c)
    for (int i = 0; i < 20; ++i)
      objects.push_back(make_object("o" + std::to_string(c) + "_" + std::to_string(i), "cat" + std::to_string(c),
                                    {{"img", {0, 0, 1, 1}}}));
  objects.push_back(make_object("lonely", "rare", {{"img", {0, 0, 1, 1}}}));
  const auto a = make_split(objects, {}, 5);
  const auto b = make_split(objects, {}, 5);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.assignment.size(), objects.size());
  EXPECT_EQ(a.assignment.at("lonely"), SplitSet::train);
  EXPECT_NEAR(static_cast<double>(a.count(SplitSet::train)) / objects.size(), 0.73, 0.05);
  EXPECT_GT(a.count(SplitSet::test), 0u);
  EXPECT_GT(a.count(SplitSet::validation), 0u);
}

TEST(RecordsIo, ObjectsAndAnnotationsRoundTrip) {
  std::vector<ObjectRecord> objects{make_object("a", "mug", {{"img1", {1, 2, 3, 4}}}),
                                    make_object("b", "keys", {{"img2", {0.5, 0.25, 10, 20}}})};
  EXPECT_EQ(read_objects(write_objects(objects)), objects);
  AnnotationSet set;
  set.categorical.push_back({"a", "material", "ceramic", "auto", Source::automatic, true});
  set.preference.push_back({"a", "b", "mass", Verdict::second_higher, "w1", Source::crowd});
  const auto text = write_annotations(set);
  EXPECT_EQ(read_annotations(text), set);
  EXPECT_EQ(write_annotations(read_annotations(text)), text);
}

TEST(RecordsIo, BadLinesNameTheLine) {
  try {
    read_annotations("{\"schema\":\"physground.annotations\",\"version\":1}\n{oops\n", "ann.jsonl");
    FAIL();
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("ann.jsonl:2"), std::string::npos) << e.what();
  }
}

TEST(ShippedData, FilesPresent) {
  for (const auto* name : {"registry.conf", "tiers.conf", "labels.conf", "prompts/interactive.txt",
                           "prompts/no_vlm.txt", "scenes/robot_scene_1.scene"})
    EXPECT_FALSE(shipped_file(name).empty()) << name;
  EXPECT_THROW(shipped_file("nope.conf"), NotFound);
}

}  // namespace
}  // namespace physground
