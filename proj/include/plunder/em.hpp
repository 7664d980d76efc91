#pragma once

// The EM driver: alternate particle-filter label sampling with synthesis
// until the policy explains the demonstrations well enough.

#include <cmath>
#include <functional>
#include <optional>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "plunder/dsl.hpp"
#include "plunder/env.hpp"
#include "plunder/filter.hpp"
#include "plunder/synth.hpp"

namespace plunder {

struct EmConfig {
  /// Convergence threshold on the mean per-step log marginal likelihood.
  /// NaN selects default_gamma() with `gamma_gain`.
  double gamma = std::numeric_limits<double>::quiet_NaN();
  double gamma_gain = 0.165;
  int max_iters = 15;
  std::size_t particles = 2000;
  std::size_t samples = 50;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  /// A later iterate must beat the best earlier one by more than this to
  /// displace it when the loop ends without converging.
  double keep_best_tolerance = 0.1;
  SynthConfig synth{};

  void validate() const;
};

struct EmIteration {
  int iteration = 0;
  std::string policy;
  std::size_t ast_size = 0;
  double log_likelihood = 0.0;
  std::optional<double> train_accuracy;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
};

struct EmResult {
  Policy policy;
  std::vector<EmIteration> trace;
  double gamma = 0.0;
  bool converged = false;
  int iterations = 0;  // completed M-steps
  int returned_iteration = 0;

  /// One JSON object per line: the iterations, then a summary record.
  std::string trace_jsonl() const;
};

/// One rule per ordered action pair, each flp(0.1), in canonical order.
Policy default_initial_policy(const Domain& domain);

/// Runs f(i) for i in [0, n) on up to `threads` worker threads.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& f);

/// Filters every demo; demo d uses the stream derive_seed(seed, d).
std::vector<FilterResult> filter_all(std::span<const Trajectory> demos, const ObservationModel& model,
                                     const Policy& pi, const Domain& domain, std::size_t particles,
                                     std::uint64_t seed, unsigned threads = 1);

/// (sum of log marginals) / (sum of steps).
double mean_log_marginal(std::span<const FilterResult> results);

/// Mean per-step log marginal likelihood of the demos under `pi`.
double likelihood(std::span<const Trajectory> demos, const ObservationModel& model, const Policy& pi,
                  const Domain& domain, std::size_t particles, std::uint64_t seed, unsigned threads = 1);

/// Threshold relative to the uninformed policy: the likelihood of
/// default_initial_policy() plus `gain` nats per step. Uses the same filter
/// seed as iteration 0 of run_plunder.
double default_gamma(std::span<const Trajectory> demos, const ObservationModel& model, const Domain& domain,
                     const EmConfig& cfg);

EmResult run_plunder(std::span<const Trajectory> demos, const ObservationModel& model, const Policy& initial,
                     const Domain& domain, const EmConfig& cfg);

}  // namespace plunder
