#include "plunder/env.hpp"

#include <cmath>
#include <numbers>

namespace plunder {

double obs_log_density(const ObservationModel& model, const Eigen::VectorXd& z, ActionId a,
                       const State& s) {
  const Eigen::ArrayXd r = (z - model.mean(a, s)).array() / model.sigma.array();
  return -0.5 * r.square().sum() + obs_peak_log_density(model);
}

double obs_peak_log_density(const ObservationModel& model) {
  return -(model.sigma.array() * std::sqrt(2.0 * std::numbers::pi)).log().sum();
}

ObservationModel Environment::observation_model(double sigma_mult) const {
  ObservationModel m;
  m.mean = [this](ActionId a, const State& s) { return action_mean(a, s); };
  m.sigma = base_noise() * std::max(sigma_mult, kMinNoiseScale);
  return m;
}

std::vector<std::string> environment_names() { return {"ss", "mg"}; }

std::unique_ptr<Environment> make_environment(std::string_view name) {
  if (name == "ss") return std::make_unique<StopSign>();
  if (name == "mg") return std::make_unique<Merge>();
  throw Error("unknown environment '" + std::string(name) + "' (valid: ss, mg)");
}

Trajectory rollout(const Environment& env, const Policy& policy, std::size_t horizon,
                   const Eigen::VectorXd& sigma_act, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Trajectory traj;
  traj.states.reserve(horizon);
  traj.observations.reserve(horizon);
  traj.gt_actions.reserve(horizon);
  State s = env.initial_state(rng);
  ActionId prev = env.initial_action();
  for (std::size_t t = 0; t < horizon; ++t) {
    const ActionId a = sample_next_action(policy, prev, s, env.domain(), rng);
    Eigen::VectorXd z = env.action_mean(a, s);
    for (Eigen::Index c = 0; c < z.size(); ++c)
      if (sigma_act[c] > 0) z[c] += sigma_act[c] * gauss(rng);
    traj.states.push_back(s);
    traj.observations.push_back(z);
    traj.gt_actions.push_back(a);
    s = env.step(s, z);
    prev = a;
  }
  return traj;
}

DemoSet generate_demos(const Environment& env, const Policy& policy, std::size_t n,
                       std::size_t horizon, double sigma_mult, std::uint64_t seed,
                       std::string split) {
  if (n == 0 || horizon == 0) throw Error("generate_demos needs n >= 1 and horizon >= 1");
  DemoSet set;
  set.env = env.name();
  set.split = std::move(split);
  set.seed = seed;
  set.sigma_mult = sigma_mult;
  set.sigma_act = env.base_noise() * sigma_mult;
  set.demos.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t demo_seed = derive_seed(seed, i);
    Rng rng(demo_seed);
    Trajectory traj = rollout(env, policy, horizon, set.sigma_act, rng);
    traj.seed = demo_seed;
    set.demos.push_back(std::move(traj));
  }
  return set;
}

bool task_success(const Environment& env, const Trajectory& traj) { return env.task_success(traj); }

}  // namespace plunder
