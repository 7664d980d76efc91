#pragma once

// Shared fixtures: a two-action toy chain small enough to enumerate exactly.

#include <Eigen/Core>

#include <cmath>
#include <vector>

#include "plunder/dsl.hpp"
#include "plunder/env.hpp"
#include "plunder/random.hpp"

namespace plunder::test {

inline Domain toy_domain(std::size_t actions = 2) {
  Domain d;
  d.name = "toy";
  d.signature = Signature({{"x", dim::length}, {"y", dim::length}});
  std::vector<std::string> names;
  for (std::size_t a = 0; a < actions; ++a) names.push_back(std::string(1, static_cast<char>('A' + a)));
  d.actions = ActionSet(names);
  d.functions = FunctionRegistry::with_builtins();
  return d;
}

inline Policy toy_policy(const Domain& d) {
  return parse_policy(
      "if (flp(lgs(x, 0.5, 3)) and a == A) then B\n"
      "if (flp(0.3) || flp(lgs(y - x, 0, -2)) and a == B) then A\n",
      d);
}

/// Action a emits mean (a == 0 ? -1 : 1) + 0.5 x on a single channel.
inline ObservationModel toy_model(double sigma = 1.2) {
  ObservationModel m;
  m.mean = [](ActionId a, const State& s) { return Eigen::VectorXd::Constant(1, (a == 0 ? -1.0 : 1.0) + 0.5 * s[0]); };
  m.sigma = Eigen::VectorXd::Constant(1, sigma);
  return m;
}

/// Random states and observations of length `steps`; labels are not policy-consistent.
inline Trajectory toy_trajectory(std::size_t steps, std::uint64_t seed) {
  Rng rng(seed);
  Trajectory t;
  for (std::size_t i = 0; i < steps; ++i) {
    State s(2);
    s << uniform(rng, -1, 2), uniform(rng, -1, 2);
    t.states.push_back(s);
    t.observations.push_back(Eigen::VectorXd::Constant(1, uniform(rng, -2.5, 2.5)));
  }
  t.seed = seed;
  return t;
}

/// Brute-force joint over every label sequence: log P(z, a_{0:T-1}) under a
/// uniform initial action and the policy's transitions.
inline std::vector<std::pair<std::vector<ActionId>, double>> enumerate_joint(const Trajectory& traj,
                                                                            const ObservationModel& model,
                                                                            const Policy& pi, const Domain& d) {
  const std::size_t na = d.actions.size();
  const std::size_t steps = traj.size();
  std::size_t total = 1;
  for (std::size_t t = 0; t < steps; ++t) total *= na;
  std::vector<std::pair<std::vector<ActionId>, double>> out;
  for (std::size_t code = 0; code < total; ++code) {
    std::vector<ActionId> seq(steps);
    std::size_t c = code;
    for (std::size_t t = 0; t < steps; ++t) {
      seq[t] = c % na;
      c /= na;
    }
    double lp = -std::log(static_cast<double>(na));
    for (std::size_t t = 0; t < steps; ++t) {
      if (t > 0) lp += std::log(transition_distribution(pi, seq[t - 1], traj.states[t], d)[static_cast<Eigen::Index>(seq[t])]);
      lp += obs_log_density(model, traj.observations[t], seq[t], traj.states[t]);
    }
    out.emplace_back(std::move(seq), lp);
  }
  return out;
}

}  // namespace plunder::test
