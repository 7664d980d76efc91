#pragma once

// Metrics and the two non-iterative baselines.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "plunder/em.hpp"
#include "plunder/env.hpp"
#include "plunder/synth.hpp"

namespace plunder {

/// Fraction of timesteps where the most frequent filtered lineage under `pi`
/// matches the ground-truth label. Demo d uses derive_seed(seed, d).
double action_accuracy(const Policy& pi, std::span<const Trajectory> demos, const ObservationModel& model,
                       const Domain& domain, std::size_t particles, std::uint64_t seed, unsigned threads = 1);

/// Fraction of matching labels; sequences must have equal length.
double label_accuracy(std::span<const ActionId> predicted, std::span<const ActionId> truth);

/// Same quantity the EM loop thresholds: mean per-step log marginal likelihood.
double mean_obs_loglik(const Policy& pi, std::span<const Trajectory> demos, const ObservationModel& model,
                       const Domain& domain, std::size_t particles, std::uint64_t seed, unsigned threads = 1);

struct FilterMetrics {
  std::optional<double> accuracy;  // absent when a demo lacks ground-truth labels
  double log_likelihood = 0.0;
};

/// action_accuracy and mean_obs_loglik from a single filtering pass.
FilterMetrics filter_metrics(const Policy& pi, std::span<const Trajectory> demos, const ObservationModel& model,
                             const Domain& domain, std::size_t particles, std::uint64_t seed, unsigned threads = 1);

struct Rate {
  double value = 0.0;
  double stderr_ = 0.0;  // binomial standard error
  std::size_t trials = 0;
};

/// Closed-loop rollouts of `pi` with actuation noise env.base_noise() * sigma_mult;
/// trial i uses derive_seed(seed, i).
Rate success_rate(const Policy& pi, const Environment& env, std::size_t trials, std::size_t horizon,
                  double sigma_mult, std::uint64_t seed);

/// Per step, the action whose observation density is highest (first on ties).
std::vector<std::vector<ActionId>> greedy_labels(std::span<const Trajectory> demos, const ObservationModel& model,
                                                 const Domain& domain);

/// Greedy labels, then one full-enumeration synthesis.
Policy run_greedy_baseline(std::span<const Trajectory> demos, const ObservationModel& model, const Domain& domain,
                           const SynthConfig& cfg, std::uint64_t seed);

/// Labels sampled by filtering under the initial coin-flip policy, then one
/// full-enumeration synthesis.
Policy run_oneshot_baseline(std::span<const Trajectory> demos, const ObservationModel& model, const Domain& domain,
                            const EmConfig& cfg);

struct MetricRow {
  std::string method;
  std::string task;
  std::string metric;
  double value = 0.0;
  double stderr_ = 0.0;
  std::uint64_t seed = 0;
};

struct MetricsReport {
  std::vector<MetricRow> rows;

  void add(MetricRow row) { rows.push_back(std::move(row)); }
  /// First row matching (method, task, metric); throws if absent.
  const MetricRow& get(std::string_view method, std::string_view task, std::string_view metric) const;

  /// Header "method,task,metric,value,stderr,seed", one line per row.
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

}  // namespace plunder
