#include <iostream>

#include "CLI11.hpp"
#include "commands.h"
#include "physground/errors.h"

namespace cli = physground::cli;

int main(int argc, char** argv) {
  CLI::App app{"Physically grounded concept annotation, grounding and planning tools"};
  app.require_subcommand(1);

  cli::AutogenArgs autogen;
  auto* a = app.add_subcommand("autogen", "Generate automatic annotations from tier and label tables");
  a->add_option("--objects", autogen.objects, "Object records (JSON lines)")->required();
  a->add_option("--tiers", autogen.tiers, "Tier table (default: shipped)");
  a->add_option("--labels", autogen.labels, "Category label table (default: shipped)");
  a->add_option("--overrides", autogen.overrides, "Per-object label overrides (JSON lines)");
  a->add_option("--out", autogen.out, "Annotation output file");

  cli::SplitArgs split;
  auto* s = app.add_subcommand("split", "Assign objects to train/validation/test");
  s->add_option("--objects", split.objects)->required();
  s->add_option("--train", split.train);
  s->add_option("--validation", split.validation);
  s->add_option("--test", split.test);
  s->add_option("--seed", split.seed);
  s->add_option("--out", split.out, "Split file (default: stdout)");

  cli::BuildJobArgs job;
  auto* b = app.add_subcommand("build-job", "Build one 250-item crowd job with attention checks");
  b->add_option("--objects", job.objects)->required();
  b->add_option("--concept", job.concept_name)->required();
  b->add_option("--checks-from", job.checks_from, "Annotations with known labels")->required();
  b->add_option("--id", job.id)->required();
  b->add_option("--annotator", job.annotator, "Assign the job to one annotator");
  b->add_option("--same-category", job.same_category, "Fraction of same-category pairs");
  b->add_option("--seed", job.seed);
  b->add_option("--out", job.out, "Job file (default: stdout)");

  cli::FilterArgs filter;
  auto* f = app.add_subcommand("filter", "Majority-filter crowd annotations and report agreement");
  f->add_option("--annotations", filter.annotations)->required();
  f->add_option("--k", filter.k, "Annotations per example");
  f->add_option("--out", filter.out);

  cli::FitArgs fit;
  double lr = 0;
  int steps = 0;
  auto* fi = app.add_subcommand("fit", "Fit latent concept scores to preference annotations");
  fi->add_option("--train", fit.train)->required();
  fi->add_option("--config", fit.config, "Key/value file with a [fit] section");
  fi->add_flag("--filter", fit.filter, "Majority-filter the training file first");
  auto* lr_opt = fi->add_option("--learning-rate", lr);
  auto* steps_opt = fi->add_option("--steps", steps);
  fi->add_option("--seed", fit.seed);
  fi->add_option("--out", fit.out, "Model file (default: stdout)");

  cli::EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Report per-concept test accuracy");
  e->add_option("--test", eval.test)->required();
  e->add_flag("--filter", eval.filter, "Majority-filter the test file first");
  e->add_option("--model", eval.model, "Fitted model file");
  e->add_option("--baseline", eval.baseline, "most-common | random | tables");
  e->add_option("--train", eval.train, "Training annotations for most-common");
  e->add_option("--objects", eval.objects, "Object records for tables");
  e->add_option("--oracle-url", eval.oracle_url, "Remote vision-language model endpoint");
  e->add_flag("--no-template", eval.no_template, "Send bare question prompts");
  e->add_option("--seed", eval.seed);
  e->add_option("--json", eval.json_out, "Also write the report as JSON");

  cli::PlanArgs plan;
  auto* p = app.add_subcommand("plan", "Run planning episodes or validate policy output");
  p->add_option("--scene", plan.scenes, "Shipped scene name or fixture path (repeatable)");
  p->add_option("--suite", plan.suite_file, "File listing scenes, one per line");
  p->add_option("--task", plan.task, "Task id (default: all tasks)");
  p->add_option("--instruction", plan.instruction, "Free-form instruction instead of scene tasks");
  p->add_option("--variant", plan.variant, "interactive | no_vlm | side_tasks | into_tasks");
  p->add_option("--policy", plan.policy, "auto | rule | prior | remote");
  p->add_option("--policy-url", plan.policy_url);
  p->add_option("--oracle", plan.oracle, "mock | remote");
  p->add_option("--oracle-url", plan.oracle_url);
  p->add_option("--noise", plan.noise, "Mock oracle label-flip probability");
  p->add_option("--seed", plan.seed);
  p->add_option("--repeats", plan.repeats, "Episodes per task");
  p->add_option("--workers", plan.workers, "Parallel episodes");
  p->add_option("--out", plan.out, "Directory for transcripts");
  p->add_option("--validate-only", plan.validate_only, "Check a file of policy output and exit");
  p->add_option("--objects", plan.objects, "Object list for --validate-only, e.g. \"A (bottle), B (bowl)\"");

  cli::ServeArgs serve;
  auto* sv = app.add_subcommand("serve", "Serve annotation sessions over HTTP");
  sv->add_option("--host", serve.host);
  sv->add_option("--port", serve.port, "0 picks a free port");
  sv->add_option("--data-dir", serve.data_dir, "Event log directory");
  sv->add_option("--jobs", serve.jobs, "Job files to load (repeatable)");
  sv->add_option("--static", serve.static_dir, "Static UI assets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? 0 : 2;
  }
  if (*lr_opt) fit.learning_rate = lr;
  if (*steps_opt) fit.steps = steps;

  try {
    if (*a) return cli::cmd_autogen(autogen, std::cout);
    if (*s) return cli::cmd_split(split, std::cout);
    if (*b) return cli::cmd_build_job(job, std::cout);
    if (*f) return cli::cmd_filter(filter, std::cout);
    if (*fi) return cli::cmd_fit(fit, std::cout);
    if (*e) return cli::cmd_eval(eval, std::cout);
    if (*p) return cli::cmd_plan(plan, std::cout);
    if (*sv) return cli::cmd_serve(serve, std::cout);
  } catch (const physground::InvalidInput& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const physground::NotFound& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 1;
}
