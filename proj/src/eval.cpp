#include "plunder/eval.hpp"

#include <cmath>

#include "plunder/filter.hpp"

namespace plunder {

double label_accuracy(std::span<const ActionId> predicted, std::span<const ActionId> truth) {
  if (predicted.size() != truth.size()) throw Error("label_accuracy: length mismatch");
  if (truth.empty()) throw Error("label_accuracy: empty sequence");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double action_accuracy(const Policy& pi, std::span<const Trajectory> demos, const ObservationModel& model,
                       const Domain& domain, std::size_t particles, std::uint64_t seed, unsigned threads) {
  for (const Trajectory& t : demos)
    if (t.gt_actions.size() != t.size()) throw Error("action_accuracy needs ground-truth labels");
  const auto results = filter_all(demos, model, pi, domain, particles, seed, threads);
  std::size_t hits = 0, total = 0;
  for (std::size_t d = 0; d < demos.size(); ++d) {
    const auto seq = map_lineage(results[d]);
    for (std::size_t t = 0; t < seq.size(); ++t) hits += seq[t] == demos[d].gt_actions[t];
    total += seq.size();
  }
  if (total == 0) throw Error("action_accuracy on empty demonstrations");
  return static_cast<double>(hits) / static_cast<double>(total);
}

double mean_obs_loglik(const Policy& pi, std::span<const Trajectory> demos, const ObservationModel& model,
                       const Domain& domain, std::size_t particles, std::uint64_t seed, unsigned threads) {
  return likelihood(demos, model, pi, domain, particles, seed, threads);
}

FilterMetrics filter_metrics(const Policy& pi, std::span<const Trajectory> demos, const ObservationModel& model,
                             const Domain& domain, std::size_t particles, std::uint64_t seed, unsigned threads) {
  const auto results = filter_all(demos, model, pi, domain, particles, seed, threads);
  FilterMetrics m;
  m.log_likelihood = mean_log_marginal(results);
  std::size_t hits = 0, total = 0;
  for (std::size_t d = 0; d < demos.size(); ++d) {
    if (demos[d].gt_actions.size() != demos[d].size()) return m;
    const auto seq = map_lineage(results[d]);
    for (std::size_t t = 0; t < seq.size(); ++t) hits += seq[t] == demos[d].gt_actions[t];
    total += seq.size();
  }
  if (total > 0) m.accuracy = static_cast<double>(hits) / static_cast<double>(total);
  return m;
}

Rate success_rate(const Policy& pi, const Environment& env, std::size_t trials, std::size_t horizon,
                  double sigma_mult, std::uint64_t seed) {
  if (trials == 0) throw Error("success_rate needs at least one trial");
  const Eigen::VectorXd sigma = env.base_noise() * sigma_mult;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < trials; ++i) {
    Rng rng(derive_seed(seed, i));
    ok += env.task_success(rollout(env, pi, horizon, sigma, rng));
  }
  Rate r;
  r.trials = trials;
  r.value = static_cast<double>(ok) / static_cast<double>(trials);
  r.stderr_ = std::sqrt(r.value * (1.0 - r.value) / static_cast<double>(trials));
  return r;
}

std::vector<std::vector<ActionId>> greedy_labels(std::span<const Trajectory> demos, const ObservationModel& model,
                                                 const Domain& domain) {
  std::vector<std::vector<ActionId>> out;
  out.reserve(demos.size());
  for (const Trajectory& t : demos) {
    std::vector<ActionId> seq(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      double best = -std::numeric_limits<double>::infinity();
      for (ActionId a = 0; a < domain.actions.size(); ++a) {
        const double ll = obs_log_density(model, t.observations[i], a, t.states[i]);
        if (ll > best) {
          best = ll;
          seq[i] = a;
        }
      }
    }
    out.push_back(std::move(seq));
  }
  return out;
}

Policy run_greedy_baseline(std::span<const Trajectory> demos, const ObservationModel& model, const Domain& domain,
                           const SynthConfig& cfg, std::uint64_t seed) {
  std::vector<std::vector<std::vector<ActionId>>> sequences;
  for (auto& seq : greedy_labels(demos, model, domain)) sequences.push_back({std::move(seq)});
  SynthConfig full = cfg;
  full.search = SearchMode::Full;
  Rng rng(seed);
  return synthesize(default_initial_policy(domain), demos, sequences, domain, full, rng);
}

Policy run_oneshot_baseline(std::span<const Trajectory> demos, const ObservationModel& model, const Domain& domain,
                            const EmConfig& cfg) {
  cfg.validate();
  const Policy pi0 = default_initial_policy(domain);
  const auto results = filter_all(demos, model, pi0, domain, cfg.particles, derive_seed(cfg.seed, 0, 1), cfg.threads);
  std::vector<std::vector<std::vector<ActionId>>> sequences(demos.size());
  const std::uint64_t trace_seed = derive_seed(cfg.seed, 0, 2);
  for (std::size_t d = 0; d < demos.size(); ++d) {
    Rng rng(derive_seed(trace_seed, d));
    sequences[d] = traceback_samples(results[d], cfg.samples, rng);
  }
  SynthConfig full = cfg.synth;
  full.search = SearchMode::Full;
  Rng rng(derive_seed(cfg.seed, 0, 3));
  return synthesize(pi0, demos, sequences, domain, full, rng);
}

const MetricRow& MetricsReport::get(std::string_view method, std::string_view task, std::string_view metric) const {
  for (const MetricRow& r : rows)
    if (r.method == method && r.task == task && r.metric == metric) return r;
  throw Error("no metric " + std::string(metric) + " for " + std::string(method) + " on " + std::string(task));
}

std::string MetricsReport::to_csv() const {
  std::string out = "method,task,metric,value,stderr,seed\n";
  for (const MetricRow& r : rows)
    out += r.method + "," + r.task + "," + r.metric + "," + format_number(r.value) + "," +
           format_number(r.stderr_) + "," + std::to_string(r.seed) + "\n";
  return out;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const MetricRow& r : rows)
    arr.push_back({{"method", r.method},
                   {"task", r.task},
                   {"metric", r.metric},
                   {"value", r.value},
                   {"stderr", r.stderr_},
                   {"seed", r.seed}});
  return arr;
}

}  // namespace plunder
