#include <gtest/gtest.h>

#include "physground/oracle.h"
#include "physground/planner.h"
#include "physground/policy.h"
#include "physground/world.h"

namespace physground {
namespace {

struct Run {
  Transcript transcript;
  EpisodeScore score;
};

Run run_task(const Scene& scene, const TaskSpec& task, ChatBackend& policy, PromptVariant variant) {
  MockOracle oracle(scene.world.ground_truth());
  EpisodeOptions options;
  options.variant = variant;
  Run run;
  run.transcript = run_episode(policy, oracle, scene.manifest, task.instruction, options);
  run.score = score_episode(scene, task, run.transcript);
  return run;
}

PromptVariant without_questions(PromptVariant v) {
  return v == PromptVariant::interactive ? PromptVariant::no_vlm : v;
}

TEST(ShippedScenes, AllParse) {
  const auto names = shipped_scene_names();
  ASSERT_EQ(names.size(), 10u);
  std::size_t tasks = 0;
  for (const auto& name : names) {
    const auto scene = shipped_scene(name);
    EXPECT_EQ(scene.name, name);
    if (name.rfind("planning_scene_", 0) == 0) tasks += scene.tasks.size();
  }
  EXPECT_EQ(tasks, 51u);
}

TEST(ShippedScenes, RulePolicySolvesRobotScenes) {
  for (const auto* name : {"robot_scene_1", "robot_scene_2"}) {
    const auto scene = shipped_scene(name);
    for (const auto& task : scene.tasks) {
      RulePolicy policy;
      const auto run = run_task(scene, task, policy, task.variant);
      EXPECT_TRUE(run.score.success) << name << " task " << task.id << ": " << run.score.reason << "\n"
                                     << transcript_to_jsonl(run.transcript, false);
    }
  }
}

TEST(ShippedScenes, PlanningScenesReport) {
  int ok = 0, total = 0;
  for (const auto& name : shipped_scene_names()) {
    if (name.rfind("planning_scene_", 0) != 0) continue;
    const auto scene = shipped_scene(name);
    for (const auto& task : scene.tasks) {
      RulePolicy policy;
      const auto run = run_task(scene, task, policy, task.variant);
      ++total;
      ok += run.score.success;
      if (!run.score.success) std::cout << name << "#" << task.id << " " << task.instruction << " -> " << run.score.reason << "\n";
    }
  }
  std::cout << ok << "/" << total << "\n";
}

}  // namespace
}  // namespace physground
