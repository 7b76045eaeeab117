#include "commands.h"

#include <signal.h>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "physground/annotate_service.h"
#include "physground/datapipe.h"
#include "physground/errors.h"
#include "physground/grounding.h"
#include "physground/kvdoc.h"
#include "physground/planner.h"
#include "physground/policy.h"
#include "physground/records_io.h"
#include "physground/remote.h"
#include "physground/rng.h"
#include "physground/world.h"

namespace physground::cli {

namespace {

using json = nlohmann::json;

void write_or_print(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_text_file(path, text);
  }
}

std::vector<ObjectRecord> load_objects(const std::string& path) { return read_objects(read_text_file(path), path); }

AnnotationSet load_annotations(const std::string& path) { return read_annotations(read_text_file(path), path); }

// Category-level priors from the tier and label tables.
class TablePredictor : public Predictor {
 public:
  TablePredictor(std::map<std::string, std::string> categories, const TierTable& tiers,
                 const CategoryLabelTable& labels)
      : categories_(std::move(categories)), tiers_(tiers), labels_(labels) {}

  std::string predict_label(const std::string& object, const ConceptSpec& spec) override {
    auto label = labels_.label_for(spec.name, category(object));
    if (!label) return "unknown";
    return *label;
  }

  double preference_probability(const std::string& first, const std::string& second, const ConceptSpec& spec) override {
    auto it = tiers_.concepts.find(spec.name);
    if (it == tiers_.concepts.end()) return 0.5;
    auto tier = [&](const std::string& object) {
      const auto& c = category(object);
      if (it->second.high.count(c)) return 1;
      if (it->second.low.count(c)) return -1;
      return 0;
    };
    const int a = tier(first), b = tier(second);
    return a > b ? 1.0 : a < b ? 0.0 : 0.5;
  }

 private:
  const std::string& category(const std::string& object) const {
    auto it = categories_.find(object);
    if (it == categories_.end()) throw NotFound("object '" + object + "' is not in the objects file");
    return it->second;
  }

  std::map<std::string, std::string> categories_;
  const TierTable& tiers_;
  const CategoryLabelTable& labels_;
};

GoldSet to_gold(const AnnotationSet& set, bool filter, std::ostream& out) {
  if (!filter) return {set.categorical, set.preference};
  auto gold = majority_filter(set);
  out << agreement_report(gold.stats) << "\n";
  return {std::move(gold.categorical), std::move(gold.preference)};
}

Scene resolve_scene(const std::string& name) {
  if (std::filesystem::exists(name)) return load_scene(name);
  return shipped_scene(name);
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

std::string percent(std::size_t ok, std::size_t n) {
  std::ostringstream os;
  os << ok << "/" << n << " (" << std::fixed << std::setprecision(1) << (n ? 100.0 * ok / n : 0.0) << "%)";
  return os.str();
}

// Endpoint from a flag, else from the named environment variable.
RemoteConfig remote_config(const std::string& flag_value, const char* env) {
  RemoteConfig c;
  c.url = flag_value;
  if (c.url.empty())
    if (const char* v = std::getenv(env)) c.url = v;
  if (c.url.empty()) throw InvalidInput(std::string("no endpoint given (flag or ") + env + ")");
  return c;
}

struct EpisodeJob {
  const Scene* scene;
  const TaskSpec* task;
  int repeat;
};

struct EpisodeRecord {
  Transcript transcript;
  EpisodeScore score;
};

std::unique_ptr<ChatBackend> make_policy(const PlanArgs& args, PromptVariant variant) {
  auto kind = args.policy;
  if (kind == "auto") kind = asks_questions(variant) ? "rule" : "prior";
  if (kind == "rule") return std::make_unique<RulePolicy>();
  if (kind == "prior") return std::make_unique<PriorPolicy>();
  if (kind == "remote") {
    return std::make_unique<RemoteChat>(remote_config(args.policy_url, "PHYSGROUND_POLICY_URL"));
  }
  throw InvalidInput("unknown policy '" + args.policy + "' (use auto, rule, prior or remote)");
}

std::unique_ptr<Oracle> make_oracle(const PlanArgs& args, const Scene& scene, std::uint64_t seed) {
  if (args.oracle == "mock") return std::make_unique<MockOracle>(scene.world.ground_truth(), MockConfig{args.noise, 0.0, seed});
  if (args.oracle == "remote") {
    return std::make_unique<RemoteOracle>(remote_config(args.oracle_url, "PHYSGROUND_ORACLE_URL"));
  }
  throw InvalidInput("unknown oracle '" + args.oracle + "' (use mock or remote)");
}

int validate_only(const PlanArgs& args, std::ostream& out) {
  SceneManifest manifest;
  if (!args.objects.empty()) {
    manifest = SceneManifest::parse_listing(args.objects);
  } else if (args.scenes.size() == 1) {
    manifest = resolve_scene(args.scenes[0]).manifest;
  } else {
    throw InvalidInput("--validate-only needs --objects or a single --scene");
  }
  const auto variant = args.variant.empty() ? PromptVariant::interactive : parse_prompt_variant(args.variant);
  const auto text = read_text_file(args.validate_only);
  const auto turn = parse_turn(text, manifest, primitives_for(variant));
  if (turn.kind == TurnKind::malformed) {
    out << "invalid: " << join(turn.diagnostics, "; ") << "\n";
    return 2;
  }
  if (turn.kind == TurnKind::question) {
    if (!turn.unknown_letters.empty()) {
      out << "invalid: unknown letters in question\n";
      return 2;
    }
    out << "valid question: " << format_question(*turn.question) << "\n";
    return 0;
  }
  if (!turn.violations.empty()) {
    for (const auto& v : turn.violations) out << "invalid: " << v << "\n";
    return 2;
  }
  out << (turn.kind == TurnKind::infeasible ? "valid (infeasible)" : "valid") << "\n";
  return 0;
}

}  // namespace

int cmd_autogen(const AutogenArgs& args, std::ostream& out) {
  const auto tiers = args.tiers.empty() ? TierTable::shipped() : TierTable::parse(read_text_file(args.tiers), args.tiers);
  const auto labels = args.labels.empty() ? CategoryLabelTable::shipped()
                                          : CategoryLabelTable::parse(read_text_file(args.labels), args.labels);
  const auto objects = load_objects(args.objects);
  auto set = auto_annotate(objects, tiers, labels);
  if (!args.overrides.empty()) {
    const auto n = apply_overrides(set, read_overrides(read_text_file(args.overrides), args.overrides));
    out << "overrides applied: " << n << "\n";
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& p : set.preference) ++counts[p.concept_name];
  for (const auto& c : set.categorical) ++counts[c.concept_name];
  for (const auto& spec : ConceptRegistry::shipped().concepts())
    if (counts.count(spec.name)) out << pad(spec.name, 20) << counts[spec.name] << "\n";
  out << pad("total", 20) << set.size() << " (" << set.preference.size() << " preferences, " << set.categorical.size()
      << " labels)\n";
  if (!args.out.empty()) write_text_file(args.out, write_annotations(set));
  return 0;
}

int cmd_split(const SplitArgs& args, std::ostream& out) {
  const auto objects = load_objects(args.objects);
  const auto split = make_split(objects, {args.train, args.validation, args.test}, args.seed);
  for (auto s : {SplitSet::train, SplitSet::validation, SplitSet::test})
    out << pad(std::string(to_string(s)), 12) << split.count(s) << "\n";
  write_or_print(args.out, write_split(split), out);
  return 0;
}

int cmd_build_job(const BuildJobArgs& args, std::ostream& out) {
  const auto& spec = ConceptRegistry::shipped().get(args.concept_name);
  auto objects = load_objects(args.objects);
  std::map<std::string, ObjectRecord> by_id;
  for (const auto& o : objects) by_id[o.instance_id] = o;
  auto item_object = [](const ObjectRecord& o) { return ItemObject{o.instance_id, o.category, select_bbox(o)}; };

  const std::size_t pool_size = kJobSize - kChecksPerJob;
  std::vector<JobItem> pool;
  if (spec.categorical()) {
    std::vector<const ObjectRecord*> eligible;
    for (const auto& o : objects)
      if (concept_applies(spec, o)) eligible.push_back(&o);
    DeterministicRng rng(mix_seed(args.seed, fnv1a("pool")));
    rng.shuffle(std::span(eligible));
    for (std::size_t i = 0; i < eligible.size() && pool.size() < pool_size; ++i)
      pool.push_back({ItemKind::categorical, {item_object(*eligible[i])}});
  } else {
    const auto sample = sample_pairs(objects, spec, pool_size, args.same_category, args.seed);
    for (const auto& w : sample.warnings) std::clog << "warning: " << w << "\n";
    for (const auto& [a, b] : sample.pairs) pool.push_back({ItemKind::preference, {item_object(by_id.at(a)), item_object(by_id.at(b))}});
  }
  const auto checks = checks_from_annotations(load_annotations(args.checks_from), spec, by_id, kChecksPerJob, args.seed);
  auto job = build_job(args.id, spec, pool, checks, args.seed);
  if (!args.annotator.empty()) {
    std::vector<std::optional<std::string>> truths;
    for (std::size_t i = 0; i < job.size(); ++i) truths.push_back(job.truth(i));
    job = AnnotationJob(job.id(), job.concept_name(), job.items(), std::move(truths), args.annotator);
  }
  out << "job " << job.id() << ": " << job.size() << " items, " << job.check_positions().size() << " checks\n";
  write_or_print(args.out, job.to_json() + "\n", out);
  return 0;
}

int cmd_filter(const FilterArgs& args, std::ostream& out) {
  const auto gold = majority_filter(load_annotations(args.annotations), args.k);
  out << agreement_report(gold.stats) << "\n";
  for (const auto& d : gold.stats.diagnostics) std::clog << "warning: " << d << "\n";
  AnnotationSet set{gold.categorical, gold.preference};
  if (!args.out.empty()) write_text_file(args.out, write_annotations(set));
  return 0;
}

int cmd_fit(const FitArgs& args, std::ostream& out) {
  FitConfig config;
  config.seed = args.seed;
  if (!args.config.empty()) {
    const auto doc = load_kv_file(args.config);
    const KvSection* section = &doc.root;
    if (auto fits = doc.all("fit"); !fits.empty()) section = fits.front();
    auto number = [&](std::string_view key, double fallback) {
      auto v = section->get(key);
      if (!v) return fallback;
      try {
        std::size_t used = 0;
        const double d = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing text");
        return d;
      } catch (const std::exception&) {
        fail_at(doc.source, section->find(key)->line, "'" + std::string(key) + "' is not a number");
      }
    };
    config.learning_rate = number("learning_rate", config.learning_rate);
    config.steps = static_cast<int>(number("steps", config.steps));
    config.l2_weight = number("l2_weight", config.l2_weight);
    config.init_scale = number("init_scale", config.init_scale);
    config.divergence_threshold = number("divergence_threshold", config.divergence_threshold);
  }
  if (args.learning_rate) config.learning_rate = *args.learning_rate;
  if (args.steps) config.steps = *args.steps;
  const auto gold = to_gold(load_annotations(args.train), args.filter, out);
  const auto examples = to_examples(gold.preference);
  const auto result = fit(examples, config);
  out << "examples " << examples.size() << ", scores " << result.model.theta.size() << ", loss "
      << std::setprecision(6) << result.loss_history.front() << " -> " << result.loss_history.back() << "\n";
  write_or_print(args.out, write_model(result.model), out);
  return 0;
}

int cmd_eval(const EvalArgs& args, std::ostream& out) {
  const int chosen = !args.model.empty() + !args.baseline.empty() + !args.oracle_url.empty();
  if (chosen != 1) throw InvalidInput("choose exactly one of --model, --baseline or --oracle-url");
  const auto gold = to_gold(load_annotations(args.test), args.filter, out);
  std::unique_ptr<Predictor> predictor;
  std::unique_ptr<Oracle> oracle;
  LatentScoreModel model;
  std::string column;
  if (!args.model.empty()) {
    model = read_model(read_text_file(args.model), args.model);
    predictor = std::make_unique<LatentModelPredictor>(model);
    column = "Latent";
  } else if (args.baseline == "most-common") {
    if (args.train.empty()) throw InvalidInput("--baseline most-common needs --train");
    predictor = std::make_unique<MostCommonPredictor>(most_common_baseline(load_annotations(args.train)));
    column = "Most Common";
  } else if (args.baseline == "random") {
    predictor = std::make_unique<RandomPredictor>(args.seed);
    column = "Random";
  } else if (args.baseline == "tables") {
    if (args.objects.empty()) throw InvalidInput("--baseline tables needs --objects");
    std::map<std::string, std::string> categories;
    for (const auto& o : load_objects(args.objects)) categories[o.instance_id] = o.category;
    predictor = std::make_unique<TablePredictor>(std::move(categories), TierTable::shipped(), CategoryLabelTable::shipped());
    column = "Tables";
  } else if (!args.oracle_url.empty()) {
    oracle = std::make_unique<RemoteOracle>(remote_config(args.oracle_url, "PHYSGROUND_ORACLE_URL"));
    predictor = std::make_unique<OraclePredictor>(*oracle, !args.no_template);
    column = "Oracle";
  } else {
    throw InvalidInput("unknown baseline '" + args.baseline + "' (use most-common, random or tables)");
  }
  const auto report = evaluate(*predictor, gold);
  out << format_report_table(report, column);
  if (!args.json_out.empty()) write_text_file(args.json_out, report_to_json(report));
  return 0;
}

int cmd_plan(const PlanArgs& args, std::ostream& out) {
  if (!args.validate_only.empty()) return validate_only(args, out);
  if (args.noise < 0 || args.noise > 1) throw InvalidInput("--noise must lie in [0, 1]");
  if (args.repeats < 1 || args.workers < 1) throw InvalidInput("--repeats and --workers must be positive");
  if (!args.variant.empty()) parse_prompt_variant(args.variant);

  std::vector<std::string> names = args.scenes;
  if (!args.suite_file.empty()) {
    std::istringstream in(read_text_file(args.suite_file));
    std::string line;
    while (std::getline(in, line)) {
      auto t = trim(line);
      if (!t.empty() && t[0] != '#') names.push_back(t);
    }
  }
  if (names.empty()) throw InvalidInput("no scene given (use --scene or --suite)");
  std::vector<Scene> scenes;
  for (const auto& n : names) scenes.push_back(resolve_scene(n));

  // Ad hoc instructions become a task without a success predicate.
  std::vector<std::unique_ptr<TaskSpec>> adhoc;
  std::vector<EpisodeJob> jobs;
  for (const auto& scene : scenes) {
    if (!args.instruction.empty()) {
      auto t = std::make_unique<TaskSpec>();
      t->id = "adhoc";
      t->instruction = args.instruction;
      jobs.push_back({&scene, t.get(), 0});
      adhoc.push_back(std::move(t));
      continue;
    }
    for (const auto& task : scene.tasks) {
      if (!args.task.empty() && task.id != args.task) continue;
      for (int r = 0; r < args.repeats; ++r) jobs.push_back({&scene, &task, r});
    }
  }
  if (jobs.empty()) throw NotFound("no task '" + args.task + "' in the given scenes");
  // Backend choices are checked once, up front.
  make_policy(args, PromptVariant::interactive);
  make_oracle(args, scenes.front(), 0);

  std::vector<EpisodeRecord> records(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const auto& job = jobs[i];
      const auto variant = args.variant.empty() ? job.task->variant : parse_prompt_variant(args.variant);
      const auto seed = mix_seed(args.seed, fnv1a(job.scene->name + "#" + job.task->id + "#" + std::to_string(job.repeat)));
      auto& rec = records[i];
      try {
        auto policy = make_policy(args, variant);
        auto oracle = make_oracle(args, *job.scene, seed);
        EpisodeOptions options;
        options.variant = variant;
        rec.transcript = run_episode(*policy, *oracle, job.scene->manifest, job.task->instruction, options);
        if (job.task->predicate.text().empty()) {
          rec.score = {false, "no success predicate"};
        } else {
          rec.score = score_episode(*job.scene, *job.task, rec.transcript);
        }
      } catch (const std::exception& e) {
        rec.transcript.outcome = Outcome::error;
        rec.transcript.note = e.what();
        rec.score = {false, e.what()};
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < std::min<int>(args.workers, static_cast<int>(jobs.size())); ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  if (!args.out.empty()) std::filesystem::create_directories(args.out);
  std::map<TaskCategory, std::pair<std::size_t, std::size_t>> by_category;
  std::size_t ok = 0, scored = 0;
  out << pad("scene", 18) << pad("task", 6) << pad("category", 18) << pad("outcome", 16) << "success\n";
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& job = jobs[i];
    const auto& rec = records[i];
    const bool has_predicate = !job.task->predicate.text().empty();
    out << pad(job.scene->name, 18) << pad(job.task->id + (args.repeats > 1 ? "." + std::to_string(job.repeat) : ""), 6)
        << pad(std::string(to_string(job.task->category)), 18) << pad(std::string(to_string(rec.transcript.outcome)), 16)
        << (has_predicate ? (rec.score.success ? "yes" : "no") : "-");
    if (has_predicate && !rec.score.success && !rec.score.reason.empty()) out << "  (" << rec.score.reason << ")";
    if (rec.transcript.outcome == Outcome::error) out << "  [" << rec.transcript.note << "]";
    out << "\n";
    if (has_predicate) {
      auto& [good, total] = by_category[job.task->category];
      good += rec.score.success;
      ++total;
      ok += rec.score.success;
      ++scored;
    }
    if (!args.out.empty()) {
      auto file = job.scene->name + "_" + job.task->id + (args.repeats > 1 ? "_" + std::to_string(job.repeat) : "") + ".jsonl";
      write_text_file((std::filesystem::path(args.out) / file).string(), transcript_to_jsonl(rec.transcript));
    }
    if (!args.instruction.empty()) {
      if (!rec.transcript.plan.empty()) out << "\n" << format_plan(rec.transcript.plan) << "\n";
      if (!rec.transcript.note.empty()) out << rec.transcript.note << "\n";
    }
  }
  if (scored) {
    out << "\n" << pad("category", 20) << "success\n";
    for (auto c : {TaskCategory::single_concept, TaskCategory::multi_concept, TaskCategory::common_knowledge})
      if (by_category.count(c)) out << pad(std::string(to_string(c)), 20) << percent(by_category[c].first, by_category[c].second) << "\n";
    out << pad("total", 20) << percent(ok, scored) << "\n";
  }
  return 0;
}

int cmd_serve(const ServeArgs& args, std::ostream& out) {
  if (!args.data_dir.empty()) std::filesystem::create_directories(args.data_dir);
  AnnotationService::Options options;
  options.data_dir = args.data_dir;
  AnnotationService service(options);
  std::size_t loaded = 0;
  for (const auto& path : args.jobs) {
    const auto text = read_text_file(path);
    json doc;
    try {
      doc = json::parse(text);
    } catch (const json::parse_error&) {
      // One job per line.
      std::istringstream in(text);
      std::string line;
      while (std::getline(in, line))
        if (!trim(line).empty()) {
          service.add_job(AnnotationJob::from_json(line, path));
          ++loaded;
        }
      continue;
    }
    if (doc.is_object() && doc.contains("jobs")) {
      for (const auto& j : doc["jobs"]) {
        service.add_job(AnnotationJob::from_json(j.dump(), path));
        ++loaded;
      }
    } else {
      service.add_job(AnnotationJob::from_json(text, path));
      ++loaded;
    }
  }

  // Signals are taken by a dedicated thread so stop() runs outside a handler.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  AnnotationServer server(service, {args.host, args.port, args.static_dir});
  const int port = server.bind();
  out << "serving on http://" << args.host << ":" << port << " (" << service.job_ids().size() << " jobs, "
      << service.session_count() << " sessions";
  if (loaded) out << ", " << loaded << " loaded";
  out << ")" << std::endl;

  std::atomic<bool> signalled{false};
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    signalled = true;
    server.stop();
  });
  server.run();
  // run() also returns when the server fails; release the waiter then.
  if (!signalled) pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  out << "stopped" << std::endl;
  return 0;
}

}  // namespace physground::cli
