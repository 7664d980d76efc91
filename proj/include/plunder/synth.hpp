#pragma once

// M-step: program synthesis from sampled action labels. Sketches (guard
// structures with free parameters) come from a bounded neighborhood of the
// current policy or from full enumeration; each is fit by maximum likelihood
// and the best trade-off against size is kept.

#include <Eigen/Core>

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "plunder/dsl.hpp"
#include "plunder/env.hpp"
#include "plunder/lbfgs.hpp"
#include "plunder/random.hpp"

namespace plunder {

enum class SearchMode { Neighborhood, Full };

struct SynthConfig {
  double lambda = 0.5;               // per-node size penalty, nats
  int restarts = 4;                  // random initializations for the refined sketches
  int screen_restarts = 1;           // random initializations when screening every sketch
  std::size_t refine_top = 16;       // sketches per transition refit with `restarts`
  std::size_t max_examples = 2000;   // distinct (demo, t, prev, next) examples kept
  int guard_depth = 2;               // full enumeration: guard connective depth
  int feature_depth = 3;             // full enumeration: nesting of function applications
  std::size_t mutation_budget = 64;  // per mutation kind
  double r_epsilon = 1e-3;           // constant probabilities live in [eps, 1 - eps]
  double k_max = 100.0;              // |k| bound in units of 1 / feature standard deviation
  double log_floor = -1e6;           // per-example log-probability floor in the posterior
  SearchMode search = SearchMode::Neighborhood;
  LbfgsOptions lbfgs{.gradient_tolerance = 1e-5, .function_tolerance = 1e-9};
};

// --- examples -------------------------------------------------------------

struct Example {
  std::size_t state = 0;  // index into TransitionExamples::states
  ActionId prev = 0;
  ActionId next = 0;
  double weight = 0.0;
};

/// Deduplicated labeled transitions. Steps t >= 1 only; the first label has no predecessor.
struct TransitionExamples {
  std::vector<State> states;
  std::vector<Example> items;

  double total_weight() const;
};

/// Pools transitions from every sampled sequence of every demo. `sequences[d]`
/// holds the samples for `demos[d]`; an example's weight is its multiplicity
/// divided by the number of samples, so each demonstrated step weighs one.
/// Keeps at most `cap` distinct examples, chosen by a shuffle seeded with `seed`.
TransitionExamples collect_examples(std::span<const Trajectory> demos,
                                    const std::vector<std::vector<std::vector<ActionId>>>& sequences,
                                    std::size_t cap, std::uint64_t seed);

/// sum_i w_i * max(log P(next_i | prev_i, s_i), floor) - lambda * size(pi).
double policy_log_posterior(const Policy& pi, const TransitionExamples& ex, const Domain& domain,
                            double lambda, double log_floor = -1e6);

// --- guard parameters -------------------------------------------------------

/// Leaf parameters in pre-order: r for a constant, (x0, k) for a logistic.
Eigen::VectorXd guard_parameters(const Guard& g);
Guard with_parameters(Guard g, const Eigen::VectorXd& params);
std::size_t parameter_count(const Guard& g);

/// Feature columns over a fixed list of states, computed once per feature.
class FeatureTable {
 public:
  FeatureTable(std::vector<State> states, const Domain& domain);

  std::size_t rows() const { return states_.size(); }
  const Eigen::ArrayXd& values(const Feature& f);

 private:
  std::vector<State> states_;
  const Domain* domain_;
  std::unordered_map<std::string, std::unique_ptr<Eigen::ArrayXd>> cache_;
};

/// Binary data for one transition: rows of a FeatureTable with labels and weights.
struct GuardData {
  Eigen::ArrayXd label;   // 1 when the guard should fire
  Eigen::ArrayXd weight;  // multiplicity
};

/// sum w * (y log P(g) + (1 - y) log (1 - P(g))) and its gradient with
/// respect to guard_parameters(g).
double guard_loglik(const Guard& g, FeatureTable& table, const GuardData& data,
                    Eigen::VectorXd* grad = nullptr);

/// Convenience form: positives are states where the transition fired.
double guard_loglik(const Guard& g, std::span<const State> positives, std::span<const State> negatives,
                    const Domain& domain, Eigen::VectorXd* grad = nullptr);

struct GuardFit {
  Guard guard;
  double loglik = 0.0;
  bool converged = false;
};

/// Maximum-likelihood parameters for the structure of `sketch`. Runs
/// `cfg.restarts` random starts plus one from the sketch's own parameters
/// when `warm_start` is set.
GuardFit fit_guard_params(const Guard& sketch, FeatureTable& table, const GuardData& data,
                          const SynthConfig& cfg, Rng& rng, bool warm_start = false);

GuardFit fit_guard_params(const Guard& sketch, std::span<const State> positives,
                          std::span<const State> negatives, const Domain& domain,
                          const SynthConfig& cfg, Rng& rng, bool warm_start = false);

// --- sketches -------------------------------------------------------------

struct Sketch {
  ActionId from = 0;
  ActionId to = 0;
  Guard guard;              // parameters are initial guesses only
  std::string provenance;   // which mutation produced it
  bool warm_start = false;  // parameters carried over from the current policy
};

/// Searchable variables as features.
std::vector<Feature> atomic_features(const Domain& domain);

/// Dimension-valid features up to `depth` nested applications of searchable
/// functions; commutatively equivalent differences appear once.
std::vector<Feature> feature_pool(const Domain& domain, int depth);

/// Structure text with parameters elided; equal keys mean equal sketches.
std::string sketch_key(const Guard& g);

/// Mutations of the policy's guard for (from, to), plus base sketches.
std::vector<Sketch> enumerate_neighborhood(const Policy& pi, ActionId from, ActionId to,
                                           const Domain& domain, const SynthConfig& cfg, Rng& rng);

/// Every guard of depth <= cfg.guard_depth over feature_pool(cfg.feature_depth).
std::vector<Sketch> enumerate_full(ActionId from, ActionId to, const Domain& domain,
                                   const SynthConfig& cfg);

// --- synthesis ------------------------------------------------------------

struct SynthReport {
  std::size_t examples = 0;
  std::size_t sketches_fit = 0;
  std::size_t candidates = 0;
  double chosen_score = 0.0;
  double previous_score = 0.0;
};

/// Best policy for the sampled labels under `cfg.search`. The previous policy
/// is always a candidate, so the result never scores below it.
Policy synthesize(const Policy& prev, const TransitionExamples& examples, const Domain& domain,
                  const SynthConfig& cfg, Rng& rng, SynthReport* report = nullptr);

Policy synthesize(const Policy& prev, std::span<const Trajectory> demos,
                  const std::vector<std::vector<std::vector<ActionId>>>& sequences, const Domain& domain,
                  const SynthConfig& cfg, Rng& rng, SynthReport* report = nullptr);

}  // namespace plunder
