#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace physground::cli {

struct AutogenArgs {
  std::string objects;
  std::string tiers;   // empty: shipped table
  std::string labels;  // empty: shipped table
  std::string overrides;
  std::string out;
};
int cmd_autogen(const AutogenArgs& args, std::ostream& out);

struct SplitArgs {
  std::string objects;
  std::string out;
  double train = 0.730;
  double validation = 0.148;
  double test = 0.122;
  std::uint64_t seed = 0;
};
int cmd_split(const SplitArgs& args, std::ostream& out);

struct BuildJobArgs {
  std::string objects;
  std::string concept_name;
  std::string checks_from;  // annotations with known labels
  std::string id;
  std::string annotator;
  double same_category = 0.5;
  std::uint64_t seed = 0;
  std::string out;
};
int cmd_build_job(const BuildJobArgs& args, std::ostream& out);

struct FilterArgs {
  std::string annotations;
  std::size_t k = 3;
  std::string out;
};
int cmd_filter(const FilterArgs& args, std::ostream& out);

struct FitArgs {
  std::string train;
  std::string config;
  bool filter = false;
  std::optional<double> learning_rate;
  std::optional<int> steps;
  std::uint64_t seed = 0;
  std::string out;
};
int cmd_fit(const FitArgs& args, std::ostream& out);

struct EvalArgs {
  std::string test;
  bool filter = false;
  std::string model;
  std::string baseline;  // most-common | random | tables
  std::string train;     // for most-common
  std::string objects;   // for tables
  std::string oracle_url;
  bool no_template = false;
  std::uint64_t seed = 0;
  std::string json_out;
};
int cmd_eval(const EvalArgs& args, std::ostream& out);

struct PlanArgs {
  std::vector<std::string> scenes;  // shipped names or fixture paths
  std::string suite_file;
  std::string task;
  std::string instruction;
  std::string variant;  // empty: each task's own variant
  std::string policy = "auto";  // auto | rule | prior | remote
  std::string policy_url;
  std::string oracle = "mock";  // mock | remote
  std::string oracle_url;
  double noise = 0.0;
  std::uint64_t seed = 0;
  int repeats = 1;
  int workers = 1;
  std::string out;
  // Validation only: a file with policy output and the object list.
  std::string validate_only;
  std::string objects;
};
int cmd_plan(const PlanArgs& args, std::ostream& out);

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir;
  std::vector<std::string> jobs;
  std::string static_dir;
};
int cmd_serve(const ServeArgs& args, std::ostream& out);

}  // namespace physground::cli
