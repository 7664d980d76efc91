#include <algorithm>
#include <cmath>
#include <limits>

#include "plunder/env.hpp"

namespace plunder {

namespace {

double braking_distance(double v, double a) {
  const double mag = std::abs(a);
  if (mag == 0.0) return std::numeric_limits<double>::infinity();
  return v * v / (2.0 * mag);
}

double time_to_stop(double v, double a) {
  const double mag = std::abs(a);
  if (mag == 0.0) return std::numeric_limits<double>::infinity();
  return v / mag;
}

constexpr const char* kGroundTruth = R"(
if (flp(lgs(v - vmax, -0.4, 1.3)) and a == ACC) then CON
if (flp(lgs(distTrv(v, amin) - dstop, -2.8, 0.8)) and a == ACC) then DEC
if (flp(lgs(distTrv(v, amin) - dstop, -2.8, 0.8)) and a == CON) then DEC
)";

}  // namespace

StopSign::StopSign(StopSignParams p) : p_(p) {
  if (!(p_.dt > 0)) throw Error("dt must be positive");
  domain_.name = "ss";
  domain_.signature = Signature({{"pos", dim::length},
                                 {"v", dim::velocity},
                                 {"dstop", dim::length},
                                 {"vmax", dim::velocity},
                                 {"amin", dim::acceleration},
                                 {"amax", dim::acceleration}});
  domain_.actions = ActionSet({"ACC", "CON", "DEC"});
  domain_.functions = FunctionRegistry::with_builtins();
  domain_.functions.add({"distTrv", 2, Function::DimRule::Fixed, {dim::velocity, dim::acceleration},
                         dim::length, [](std::span<const double> x) { return braking_distance(x[0], x[1]); },
                         true});
  domain_.functions.add({"timeToStp", 2, Function::DimRule::Fixed,
                         {dim::velocity, dim::acceleration}, dim::time,
                         [](std::span<const double> x) { return time_to_stop(x[0], x[1]); }, true});
}

Eigen::VectorXd StopSign::base_noise() const { return Eigen::VectorXd::Constant(1, p_.noise); }

State StopSign::initial_state(Rng& rng) const {
  State s(6);
  s[kPos] = 0.0;
  s[kV] = 0.0;
  s[kDstop] = uniform(rng, p_.dstop_lo, p_.dstop_hi);
  s[kVmax] = uniform(rng, p_.vmax_lo, p_.vmax_hi);
  s[kAmin] = p_.a_min;
  s[kAmax] = p_.a_max;
  return s;
}

State StopSign::step(const State& s, const Eigen::VectorXd& z) const {
  State n = s;
  const double v = s[kV];
  n[kV] = std::max(0.0, v + z[0] * p_.dt);
  n[kPos] = s[kPos] + v * p_.dt;
  n[kDstop] = s[kDstop] - v * p_.dt;
  return n;
}

Eigen::VectorXd StopSign::action_mean(ActionId a, const State& s) const {
  double m = 0.0;
  switch (a) {
    case 0:  // ACC
      m = std::min(s[kAmax], p_.accel);
      break;
    case 1:  // CON
      m = 0.0;
      break;
    default: {  // DEC: brake to stop at the sign
      const double d = s[kDstop];
      const double v = s[kV];
      m = d <= 0.05 ? s[kAmin] : std::clamp(-v * v / (2.0 * d), s[kAmin], -p_.brake_floor);
      break;
    }
  }
  return Eigen::VectorXd::Constant(1, m);
}

bool StopSign::task_success(const Trajectory& traj) const {
  if (traj.states.empty()) return false;
  const State& last = traj.states.back();
  return std::abs(last[kDstop]) <= p_.stop_tolerance && last[kV] <= p_.speed_tolerance;
}

Policy StopSign::gt_policy() const { return parse_policy(kGroundTruth, domain_); }

}  // namespace plunder
