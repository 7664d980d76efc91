#pragma once

// Desk-scale simulators: Stop-Sign (single lane, stop at a sign) and a
// simplified three-lane Merge. Each provides dynamics, a per-action Gaussian
// observation model, a hand-written probabilistic policy and a success test.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "plunder/dsl.hpp"
#include "plunder/random.hpp"

namespace plunder {

/// Per-action mean observation with shared diagonal noise.
struct ObservationModel {
  std::function<Eigen::VectorXd(ActionId, const State&)> mean;
  Eigen::VectorXd sigma;

  std::size_t channels() const { return static_cast<std::size_t>(sigma.size()); }
};

/// Sum of per-channel Gaussian log densities of z around mean(a, s).
double obs_log_density(const ObservationModel& model, const Eigen::VectorXd& z, ActionId a,
                       const State& s);

/// Log density at the mode: -sum log(sigma * sqrt(2 pi)).
double obs_peak_log_density(const ObservationModel& model);

struct Trajectory {
  std::vector<State> states;
  std::vector<Eigen::VectorXd> observations;
  std::vector<ActionId> gt_actions;  // empty when unlabeled
  std::uint64_t seed = 0;

  std::size_t size() const { return states.size(); }
};

struct DemoSet {
  std::string env;
  std::string split;
  std::uint64_t seed = 0;
  double sigma_mult = 1.0;
  Eigen::VectorXd sigma_act;  // per channel, as applied
  std::vector<Trajectory> demos;
};

class Environment {
 public:
  virtual ~Environment() = default;

  const Domain& domain() const { return domain_; }
  const std::string& name() const { return domain_.name; }

  virtual double dt() const = 0;
  virtual std::size_t default_horizon() const = 0;
  virtual std::size_t channels() const = 0;
  /// Actuation noise standard deviation at multiplier 1.
  virtual Eigen::VectorXd base_noise() const = 0;

  virtual State initial_state(Rng& rng) const = 0;
  virtual ActionId initial_action() const = 0;
  virtual State step(const State& s, const Eigen::VectorXd& z) const = 0;
  virtual Eigen::VectorXd action_mean(ActionId a, const State& s) const = 0;
  virtual bool task_success(const Trajectory& traj) const = 0;
  virtual Policy gt_policy() const = 0;
  /// Likelihood gain over the coin-flip policy at which EM stops, nats/step.
  virtual double recommended_gamma_gain() const = 0;
  /// Per-node size penalty calibrated on this task's noise sweep.
  virtual double recommended_lambda() const = 0;

  /// Observation model whose noise matches demonstrations generated at
  /// `sigma_mult`, floored so the density stays proper for noiseless data.
  ObservationModel observation_model(double sigma_mult = 1.0) const;

 protected:
  Domain domain_;
};

inline constexpr double kMinNoiseScale = 0.25;

struct StopSignParams {
  double dt = 0.1;
  std::size_t horizon = 125;
  double accel = 4.0;         // ACC mean before the a_max clamp
  double a_min = -20.0;
  double a_max = 13.0;
  double brake_floor = 1.0;   // DEC mean never exceeds -brake_floor
  double vmax_lo = 10.0, vmax_hi = 20.0;
  double dstop_lo = 50.0, dstop_hi = 90.0;
  double noise = 3.0;         // acceleration noise at multiplier 1
  double stop_tolerance = 2.0;
  double speed_tolerance = 0.5;
};

/// State: pos, v, dstop, vmax, amin, amax. Actions: ACC, CON, DEC.
/// One observation channel: commanded acceleration.
class StopSign final : public Environment {
 public:
  explicit StopSign(StopSignParams p = {});

  const StopSignParams& params() const { return p_; }

  double dt() const override { return p_.dt; }
  std::size_t default_horizon() const override { return p_.horizon; }
  std::size_t channels() const override { return 1; }
  Eigen::VectorXd base_noise() const override;
  State initial_state(Rng& rng) const override;
  ActionId initial_action() const override { return 0; }
  State step(const State& s, const Eigen::VectorXd& z) const override;
  Eigen::VectorXd action_mean(ActionId a, const State& s) const override;
  bool task_success(const Trajectory& traj) const override;
  Policy gt_policy() const override;
  double recommended_gamma_gain() const override { return 0.165; }
  double recommended_lambda() const override { return 0.5; }

  enum Var : Eigen::Index { kPos, kV, kDstop, kVmax, kAmin, kAmax };

 private:
  StopSignParams p_;
};

struct MergeParams {
  double dt = 0.1;
  std::size_t horizon = 125;
  double lane_width = 4.0;
  double accel = 2.0;          // FASTER
  double brake = 4.0;          // SLOWER decelerates at this rate
  double lateral_speed = 4.0;  // RIGHT; one lane change takes lane_width / lateral_speed
  double v_cruise = 25.0;       // FASTER relaxes toward this speed
  double v_min = 8.0;           // SLOWER relaxes toward this speed
  double relax = 1.0;           // seconds
  double v_cap = 35.0;
  double collision_gap = 4.0;
  double spacing_lo = 50.0, spacing_hi = 70.0;
  double noise_accel = 1.0;
  double noise_lateral = 0.3;
};

/// Three lanes. The ego starts in the middle lane and must merge into the
/// slower rightmost lane without coming within collision_gap of another car.
/// Traffic in each lane is a constant-speed platoon with fixed spacing.
/// Searchable state: v, fgap, rfront, rback, dright. Actions: FASTER, SLOWER, RIGHT.
/// Observation channels: longitudinal acceleration, lateral velocity.
class Merge final : public Environment {
 public:
  explicit Merge(MergeParams p = {});

  const MergeParams& params() const { return p_; }

  double dt() const override { return p_.dt; }
  std::size_t default_horizon() const override { return p_.horizon; }
  std::size_t channels() const override { return 2; }
  Eigen::VectorXd base_noise() const override;
  State initial_state(Rng& rng) const override;
  ActionId initial_action() const override { return 0; }
  State step(const State& s, const Eigen::VectorXd& z) const override;
  Eigen::VectorXd action_mean(ActionId a, const State& s) const override;
  bool task_success(const Trajectory& traj) const override;
  Policy gt_policy() const override;
  double recommended_gamma_gain() const override { return 0.215; }
  double recommended_lambda() const override { return 0.75; }

  enum Var : Eigen::Index {
    kV, kFgap, kRfront, kRback, kDright,
    kT, kX, kY, kPh0, kPh1, kPh2, kSp0, kSp1, kSp2, kU0, kU1, kU2, kCrash
  };

 private:
  void refresh_gaps(State& s) const;
  MergeParams p_;
};

std::vector<std::string> environment_names();

/// "ss" or "mg"; throws Error listing valid names otherwise.
std::unique_ptr<Environment> make_environment(std::string_view name);

/// Closed-loop rollout: sample an action from `policy`, emit the action's
/// mean observation plus Gaussian actuation noise, step the dynamics.
Trajectory rollout(const Environment& env, const Policy& policy, std::size_t horizon,
                   const Eigen::VectorXd& sigma_act, Rng& rng);

/// `n` rollouts of `policy`, demo i seeded with derive_seed(seed, i).
DemoSet generate_demos(const Environment& env, const Policy& policy, std::size_t n,
                       std::size_t horizon, double sigma_mult, std::uint64_t seed,
                       std::string split = "train");

bool task_success(const Environment& env, const Trajectory& traj);

}  // namespace plunder
