#include "physground/grounding.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

#include "json_codec.h"
#include "physground/errors.h"
#include "physground/kvdoc.h"
#include "physground/rng.h"

namespace physground {

namespace {

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

std::vector<PreferenceExample> to_examples(std::span<const PreferenceAnnotation> annotations) {
  std::vector<PreferenceExample> out;
  for (const auto& a : annotations) {
    double y1 = 0.0;
    switch (a.verdict) {
      case Verdict::first_higher: y1 = 1.0; break;
      case Verdict::second_higher: y1 = 0.0; break;
      case Verdict::equal: y1 = 0.5; break;
      case Verdict::unclear: continue;
    }
    out.push_back({a.first, a.second, a.concept_name, y1});
  }
  return out;
}

double LatentScoreModel::at(const std::string& object, const std::string& concept_name) const {
  auto it = theta.find({object, concept_name});
  if (it == theta.end()) throw NotFound("model has no score for object '" + object + "' and concept '" + concept_name + "'");
  return it->second;
}

bool LatentScoreModel::contains(const std::string& object, const std::string& concept_name) const {
  return theta.count({object, concept_name}) > 0;
}

void LatentScoreModel::center() {
  std::map<std::string, std::pair<double, std::size_t>> sums;
  for (const auto& [key, value] : theta) {
    auto& s = sums[key.second];
    s.first += value;
    ++s.second;
  }
  for (auto& [key, value] : theta) {
    const auto& s = sums[key.second];
    value -= s.first / static_cast<double>(s.second);
  }
  centered = true;
}

double bt_probability(double log_s1, double log_s2) {
  if (std::isnan(log_s1) || std::isnan(log_s2)) throw InvalidInput("Bradley-Terry input is NaN");
  if (std::isinf(log_s1) && std::isinf(log_s2) && (log_s1 > 0) == (log_s2 > 0))
    throw InvalidInput("cannot compare two scores that are both infinite with the same sign");
  if (std::isinf(log_s1)) return log_s1 > 0 ? 1.0 : 0.0;
  if (std::isinf(log_s2)) return log_s2 > 0 ? 0.0 : 1.0;
  return logistic(log_s1 - log_s2);
}

namespace {

double lookup_theta(const LatentScoreModel& model, const std::string& object, const std::string& concept_name) {
  auto it = model.theta.find({object, concept_name});
  if (it == model.theta.end())
    throw InvalidInput("model has no theta for object '" + object + "' and concept '" + concept_name + "'");
  return it->second;
}

double regularizer(const LatentScoreModel& model) {
  double sum = 0;
  for (const auto& [_, v] : model.theta) sum += v * v;
  return model.l2_weight * sum;
}

}  // namespace

double bce_loss(const LatentScoreModel& model, std::span<const PreferenceExample> batch) {
  double total = 0;
  for (const auto& ex : batch) {
    const double d = lookup_theta(model, ex.first, ex.concept_name) - lookup_theta(model, ex.second, ex.concept_name);
    // -log P = softplus(-d), -log(1 - P) = softplus(d)
    total += ex.target_first * softplus(-d) + ex.target_second() * softplus(d);
  }
  const double mean = batch.empty() ? 0.0 : total / static_cast<double>(batch.size());
  return mean + regularizer(model);
}

std::map<ScoreKey, double> bce_gradient(const LatentScoreModel& model, std::span<const PreferenceExample> batch) {
  std::map<ScoreKey, double> grad;
  for (const auto& [key, v] : model.theta) grad[key] = 2.0 * model.l2_weight * v;
  if (batch.empty()) return grad;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    const double t1 = lookup_theta(model, ex.first, ex.concept_name);
    const double t2 = lookup_theta(model, ex.second, ex.concept_name);
    const double residual = (logistic(t1 - t2) - ex.target_first) * inv_n;
    grad[{ex.first, ex.concept_name}] += residual;
    grad[{ex.second, ex.concept_name}] -= residual;
  }
  return grad;
}

FitResult fit(std::span<const PreferenceExample> examples, const FitConfig& config) {
  if (examples.empty()) throw InvalidInput("fit needs at least one preference example");
  if (config.steps < 0) throw InvalidInput("steps must be nonnegative");
  if (!(config.learning_rate > 0)) throw InvalidInput("learning rate must be positive");
  if (config.l2_weight < 0) throw InvalidInput("l2 weight must be nonnegative");

  // Dense indexing keeps the loop allocation-free.
  std::map<ScoreKey, std::size_t> index;
  for (const auto& ex : examples) {
    if (ex.first == ex.second) throw InvalidInput("preference example compares '" + ex.first + "' with itself");
    index.emplace(ScoreKey{ex.first, ex.concept_name}, 0);
    index.emplace(ScoreKey{ex.second, ex.concept_name}, 0);
  }
  std::vector<ScoreKey> keys;
  keys.reserve(index.size());
  for (auto& [key, slot] : index) {
    slot = keys.size();
    keys.push_back(key);
  }
  struct Pair {
    std::size_t a, b;
    double y;
  };
  std::vector<Pair> pairs;
  pairs.reserve(examples.size());
  for (const auto& ex : examples)
    pairs.push_back({index.at({ex.first, ex.concept_name}), index.at({ex.second, ex.concept_name}), ex.target_first});

  DeterministicRng rng(config.seed);
  std::vector<double> theta(keys.size(), 0.0);
  if (config.init_scale > 0)
    for (auto& t : theta) t = config.init_scale * rng.normal();
  std::vector<double> grad(keys.size());
  const double inv_n = 1.0 / static_cast<double>(pairs.size());

  auto loss_and_grad = [&](bool want_grad) {
    double total = 0;
    if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);
    for (const auto& p : pairs) {
      const double d = theta[p.a] - theta[p.b];
      total += p.y * softplus(-d) + (1.0 - p.y) * softplus(d);
      if (want_grad) {
        const double r = (logistic(d) - p.y) * inv_n;
        grad[p.a] += r;
        grad[p.b] -= r;
      }
    }
    double reg = 0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      reg += theta[i] * theta[i];
      if (want_grad) grad[i] += 2.0 * config.l2_weight * theta[i];
    }
    return total * inv_n + config.l2_weight * reg;
  };

  FitResult result;
  result.loss_history.reserve(static_cast<std::size_t>(config.steps) + 1);
  for (int step = 0; step < config.steps; ++step) {
    const double loss = loss_and_grad(true);
    if (!std::isfinite(loss) || loss > config.divergence_threshold) {
      std::ostringstream os;
      os << "fit diverged at step " << step << ": loss " << loss << " (learning rate " << config.learning_rate
         << ", " << pairs.size() << " examples, " << theta.size() << " parameters)";
      throw DivergenceError(os.str());
    }
    result.loss_history.push_back(loss);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= config.learning_rate * grad[i];
  }
  result.loss_history.push_back(loss_and_grad(false));

  result.model.l2_weight = config.l2_weight;
  for (std::size_t i = 0; i < keys.size(); ++i) result.model.theta[keys[i]] = theta[i];
  result.model.center();
  return result;
}

std::string predict_categorical(const AnswerDistribution& dist, const ConceptSpec& concept_spec) {
  if (!concept_spec.categorical()) throw InvalidInput("concept '" + concept_spec.name + "' is not categorical");
  const std::string* best = nullptr;
  double best_p = -1;
  for (const auto& label : concept_spec.labels) {
    auto p = dist.probability(label);
    if (!p) throw InvalidInput("distribution lacks label '" + label + "' of concept '" + concept_spec.name + "'");
    if (*p > best_p) {
      best_p = *p;
      best = &label;
    }
  }
  return *best;
}

PreferencePrediction predict_preference(const ConceptScore& first, const ConceptScore& second) {
  if (first.concept_name != second.concept_name)
    throw InvalidInput("cannot compare scores of concepts '" + first.concept_name + "' and '" + second.concept_name + "'");
  if (first.infinite && second.infinite) throw InvalidInput("both scores are infinite");
  PreferencePrediction out;
  if (first.score == second.score) {
    out.tie = true;
    out.verdict = Verdict::first_higher;
  } else {
    out.verdict = first.score > second.score ? Verdict::first_higher : Verdict::second_higher;
  }
  return out;
}

std::string OraclePredictor::prompt(const ConceptSpec& concept_spec) const {
  return use_template_ ? answer_prompt_template(concept_spec.question_prompt) : concept_spec.question_prompt;
}

std::string OraclePredictor::predict_label(const std::string& object, const ConceptSpec& concept_spec) {
  OracleRequest req{object, std::nullopt, prompt(concept_spec), concept_spec.labels};
  return predict_categorical(oracle_->query(req), concept_spec);
}

double OraclePredictor::preference_probability(const std::string& first, const std::string& second,
                                               const ConceptSpec& concept_spec) {
  auto score_of = [&](const std::string& object) {
    OracleRequest req{object, std::nullopt, prompt(concept_spec), {"yes", "no"}};
    return concept_score(oracle_->query(req), object, concept_spec.name);
  };
  auto pred = predict_preference(score_of(first), score_of(second));
  return pred.verdict == Verdict::first_higher ? 1.0 : 0.0;
}

std::string LatentModelPredictor::predict_label(const std::string&, const ConceptSpec& concept_spec) {
  throw NotFound("latent score models do not predict categorical concept '" + concept_spec.name + "'");
}

double LatentModelPredictor::preference_probability(const std::string& first, const std::string& second,
                                                    const ConceptSpec& concept_spec) {
  const double a = model_->at(first, concept_spec.name);
  const double b = model_->at(second, concept_spec.name);
  return a >= b ? 1.0 : 0.0;
}

std::string MostCommonPredictor::predict_label(const std::string&, const ConceptSpec& concept_spec) {
  auto it = modal_.find(concept_spec.name);
  if (it == modal_.end()) throw NotFound("no training labels for concept '" + concept_spec.name + "'");
  return it->second;
}

MostCommonPredictor most_common_baseline(const AnnotationSet& train, const ConceptRegistry& registry) {
  std::map<std::string, std::map<std::string, std::size_t>> counts;
  for (const auto& a : train.categorical) ++counts[a.concept_name][normalize_label(a.label)];
  std::map<std::string, std::string> modal;
  for (const auto& [concept_name, tally] : counts) {
    const auto* spec = registry.find(concept_name);
    auto rank = [&](const std::string& label) -> std::size_t {
      if (spec)
        for (std::size_t i = 0; i < spec->labels.size(); ++i)
          if (spec->labels[i] == label) return i;
      return std::numeric_limits<std::size_t>::max();
    };
    const std::string* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& [label, n] : tally) {
      if (!best || n > best_count || (n == best_count && rank(label) < rank(*best))) {
        best = &label;
        best_count = n;
      }
    }
    modal[concept_name] = *best;
  }
  return MostCommonPredictor(std::move(modal));
}

std::string RandomPredictor::predict_label(const std::string& object, const ConceptSpec& concept_spec) {
  DeterministicRng rng(mix_seed(seed_, fnv1a(concept_spec.name, fnv1a(object))));
  return concept_spec.labels.at(rng.below(concept_spec.labels.size()));
}

double RandomPredictor::preference_probability(const std::string& first, const std::string& second,
                                               const ConceptSpec& concept_spec) {
  DeterministicRng rng(mix_seed(seed_, fnv1a(concept_spec.name, fnv1a(second, fnv1a(first + "\x1f")))));
  return rng.bernoulli(0.5) ? 1.0 : 0.0;
}

EvalReport evaluate(Predictor& predictor, const GoldSet& gold, const ConceptRegistry& registry) {
  EvalReport report;
  std::map<std::string, double> correct;
  std::set<std::string> omitted;
  std::set<std::string> seen;
  auto omit = [&](const std::string& concept_name, const std::string& why) {
    if (omitted.insert(concept_name).second) report.warnings.push_back("concept '" + concept_name + "' omitted: " + why);
  };
  for (const auto& g : gold.categorical) {
    seen.insert(g.concept_name);
    if (omitted.count(g.concept_name)) continue;
    const auto& spec = registry.get(g.concept_name);
    try {
      auto label = predictor.predict_label(g.object, spec);
      correct[g.concept_name] += normalize_label(label) == normalize_label(g.label) ? 1.0 : 0.0;
      ++report.counts[g.concept_name];
    } catch (const NotFound& e) {
      omit(g.concept_name, e.what());
    }
  }
  for (const auto& g : gold.preference) {
    seen.insert(g.concept_name);
    if (g.verdict != Verdict::first_higher && g.verdict != Verdict::second_higher) continue;
    if (omitted.count(g.concept_name)) continue;
    const auto& spec = registry.get(g.concept_name);
    try {
      double p = predictor.preference_probability(g.first, g.second, spec);
      correct[g.concept_name] += g.verdict == Verdict::first_higher ? p : 1.0 - p;
      ++report.counts[g.concept_name];
    } catch (const NotFound& e) {
      omit(g.concept_name, e.what());
    }
  }
  for (const auto& name : omitted) {
    report.counts.erase(name);
    correct.erase(name);
  }
  for (const auto& name : seen)
    if (!omitted.count(name) && !report.counts.count(name))
      report.warnings.push_back("concept '" + name + "' omitted: no definite gold examples");
  double sum = 0;
  for (const auto& [name, n] : report.counts) {
    const double acc = correct[name] / static_cast<double>(n);
    report.per_concept_accuracy[name] = acc;
    sum += acc;
  }
  if (!report.per_concept_accuracy.empty()) report.average = sum / static_cast<double>(report.per_concept_accuracy.size());
  for (const auto& w : report.warnings) std::clog << "warning: " << w << "\n";
  return report;
}

namespace {

std::string display_name(std::string name) {
  bool start = true;
  for (auto& c : name) {
    if (c == '_') {
      c = ' ';
      start = true;
    } else if (start) {
      c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      start = false;
    }
  }
  return name;
}

}  // namespace

std::string format_report_table(const EvalReport& report, const std::string& column, const ConceptRegistry& registry) {
  std::vector<std::string> order;
  for (const auto& c : registry.concepts())
    if (report.per_concept_accuracy.count(c.name)) order.push_back(c.name);
  for (const auto& [name, _] : report.per_concept_accuracy)
    if (!registry.find(name)) order.push_back(name);
  std::size_t width = 7;
  for (const auto& n : order) width = std::max(width, display_name(n).size());
  const std::size_t col = std::max<std::size_t>(column.size(), 8);
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "Concept" << "  " << std::right
     << std::setw(static_cast<int>(col)) << column << "  " << std::setw(6) << "N" << "\n";
  const std::string rule(width + col + 10, '-');
  os << rule << "\n";
  os << std::fixed << std::setprecision(3);
  for (const auto& n : order)
    os << std::left << std::setw(static_cast<int>(width)) << display_name(n) << "  " << std::right
       << std::setw(static_cast<int>(col)) << report.per_concept_accuracy.at(n) << "  " << std::setw(6)
       << report.counts.at(n) << "\n";
  os << rule << "\n";
  os << std::left << std::setw(static_cast<int>(width)) << "Average" << "  " << std::right
     << std::setw(static_cast<int>(col)) << report.average << "\n";
  return os.str();
}

std::string report_to_json(const EvalReport& report) {
  detail::json j;
  j["schema"] = "physground.eval_report";
  j["version"] = 1;
  j["average"] = report.average;
  for (const auto& [name, acc] : report.per_concept_accuracy)
    j["concepts"][name] = {{"accuracy", acc}, {"count", report.counts.at(name)}};
  j["warnings"] = report.warnings;
  return j.dump(2) + "\n";
}

std::string write_model(const LatentScoreModel& model) {
  std::string out = detail::header_line("physground.model");
  for (const auto& [key, theta] : model.theta) {
    out += detail::json{{"object", key.first}, {"concept", key.second}, {"theta", theta}}.dump() + "\n";
  }
  return out;
}

LatentScoreModel read_model(std::string_view text, std::string_view source) {
  LatentScoreModel model;
  detail::for_each_jsonl(text, source, "physground.model", [&](const detail::json& j, int line) {
    model.theta[{detail::get_string(j, "object", source, line), detail::get_string(j, "concept", source, line)}] =
        detail::get_number(j, "theta", source, line);
  });
  return model;
}

}  // namespace physground
