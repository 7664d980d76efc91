#pragma once

// Experiment plumbing behind the `plunder` command: configuration, demo
// generation, training, evaluation and the command dispatcher itself.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "plunder/em.hpp"
#include "plunder/env.hpp"
#include "plunder/eval.hpp"

namespace plunder {

/// Invalid configuration; the command exits with code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitNotConverged = 3, kExitRuntime = 4 };

struct ExperimentConfig {
  std::string env = "ss";
  std::size_t train = 10;
  std::size_t test = 10;
  std::size_t horizon = 0;  // 0: the environment's default
  double sigma_mult = 1.0;
  std::uint64_t seed = 1;
  std::filesystem::path out = "out";

  // EM. NaN picks the environment's recommendation.
  double gamma = std::numeric_limits<double>::quiet_NaN();
  double gamma_gain = std::numeric_limits<double>::quiet_NaN();
  double lambda = std::numeric_limits<double>::quiet_NaN();
  std::size_t particles = 2000;
  std::size_t samples = 50;
  int max_iters = 15;
  unsigned threads = 1;

  // Evaluation.
  std::size_t eval_particles = 20000;
  std::size_t trials = 100;
  std::vector<double> noise_sweep;
  std::string baseline;                       // "", "greedy" or "oneshot"
  std::vector<std::string> policies;          // "method=path"
  std::filesystem::path policy_file;          // rollout input; empty means the GT policy

  /// Unknown keys and malformed values raise ConfigError.
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;

  std::size_t horizon_for(const Environment& env) const;
  /// EmConfig with NaN fields resolved against `env`.
  EmConfig em_config(const Environment& env) const;
};

struct DemoPair {
  DemoSet train;
  DemoSet test;
};

/// GT demonstrations: train from derive_seed(seed, 1), test from derive_seed(seed, 2).
DemoPair make_demos(const Environment& env, const ExperimentConfig& cfg, double sigma_mult);

struct TrainOutcome {
  std::string method;
  Policy policy;
  std::optional<EmResult> em;  // set for "plunder"
  double seconds = 0.0;
};

/// method is "plunder", "greedy" or "oneshot".
TrainOutcome train_method(const std::string& method, const Environment& env, const DemoSet& train,
                          const ExperimentConfig& cfg);

/// Appends accuracy, log_likelihood, success_rate and ast_size rows for `pi`.
void evaluate_policy(MetricsReport& report, const std::string& method, const std::string& task, const Policy& pi,
                     const Environment& env, const DemoSet& test, const ExperimentConfig& cfg);

/// Task label used in metrics: "ss", or "mg@0.5" inside a noise sweep.
std::string task_label(const std::string& env, std::optional<double> sigma_mult);

/// Entry point for `plunder <command> [flags]`; returns the process exit code.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace plunder
