#pragma once

// E-step: particle filtering over latent action labels, ancestral traceback,
// and an exact forward-backward posterior for small problems.

#include <Eigen/Core>

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "plunder/dsl.hpp"
#include "plunder/env.hpp"
#include "plunder/random.hpp"

namespace plunder {

inline constexpr std::size_t kNoParent = std::numeric_limits<std::size_t>::max();

struct Particle {
  ActionId action = 0;
  std::size_t parent = kNoParent;  // index into the previous generation
  double log_weight = 0.0;         // observation log density of this particle's step
};

struct FilterOptions {
  /// 0 resamples every step; otherwise resample when ESS < threshold * M.
  double ess_threshold = 0.0;
};

struct FilterResult {
  std::vector<std::vector<Particle>> generations;
  double log_marginal = 0.0;
  /// Per-step log of the weighted mean incremental weight; sums to log_marginal.
  std::vector<double> step_log_mean_weights;
  /// Normalized log weights of the last generation (uniform after resampling).
  Eigen::VectorXd final_log_weights;

  std::size_t steps() const { return generations.size(); }
  std::size_t particles() const { return generations.empty() ? 0 : generations.front().size(); }
};

/// Bootstrap filter: uniform initial action, policy as proposal,
/// observation density as weight. Deterministic given `rng`'s state.
FilterResult run_filter(const Trajectory& traj, const ObservationModel& model, const Policy& policy,
                        const Domain& domain, std::size_t particles, Rng& rng,
                        const FilterOptions& options = {});

/// Low-variance resampling. Returns `count` parent indices (default: as many
/// as weights), sorted ascending. Throws if no weight is finite.
std::vector<std::size_t> resample_systematic(std::span<const double> log_weights, Rng& rng,
                                             std::size_t count = 0);

/// Label sequence obtained by following parent pointers from `final_index`.
std::vector<ActionId> lineage(const FilterResult& fr, std::size_t final_index);

/// `n` lineages from distinct final particles (weighted draw if the final
/// generation was not resampled).
std::vector<std::vector<ActionId>> traceback_samples(const FilterResult& fr, std::size_t n, Rng& rng);

/// The label sequence shared by the most final particles; ties go to the
/// lowest final index.
std::vector<ActionId> map_lineage(const FilterResult& fr);

/// T x |A| label frequencies over all final lineages (smoothing estimate).
Eigen::MatrixXd lineage_marginals(const FilterResult& fr, std::size_t num_actions);

struct ExactPosterior {
  Eigen::MatrixXd filtered;  // T x |A|: P(a_t | z_0..z_t)
  Eigen::MatrixXd smoothed;  // T x |A|: P(a_t | z_0..z_{T-1})
  double log_marginal = 0.0;
};

/// Forward-backward recursion under the same model the filter targets.
ExactPosterior exact_posterior(const Trajectory& traj, const ObservationModel& model,
                               const Policy& policy, const Domain& domain);

}  // namespace plunder
