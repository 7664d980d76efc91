#include <algorithm>
#include <cmath>

#include "plunder/env.hpp"

namespace plunder {

namespace {

constexpr const char* kGroundTruth = R"(
if (flp(lgs(rfront, 22, 1)) && flp(lgs(rback, 6, 1)) and a == FASTER) then RIGHT
if (flp(lgs(fgap, 22, -1)) and a == FASTER) then SLOWER
if (flp(lgs(fgap, 30, 1)) and a == SLOWER) then FASTER
if (flp(lgs(dright, 0.5, -4)) and a == RIGHT) then FASTER
)";

constexpr int kLanes = 3;

struct Gaps {
  double ahead;
  double behind;
};

}  // namespace

Merge::Merge(MergeParams p) : p_(p) {
  if (!(p_.dt > 0)) throw Error("dt must be positive");
  domain_.name = "mg";
  domain_.signature = Signature({{"v", dim::velocity},
                                 {"fgap", dim::length},
                                 {"rfront", dim::length},
                                 {"rback", dim::length},
                                 {"dright", dim::length},
                                 {"t", dim::time, false},
                                 {"x", dim::length, false},
                                 {"y", dim::length, false},
                                 {"ph0", dim::length, false},
                                 {"ph1", dim::length, false},
                                 {"ph2", dim::length, false},
                                 {"sp0", dim::length, false},
                                 {"sp1", dim::length, false},
                                 {"sp2", dim::length, false},
                                 {"u0", dim::velocity, false},
                                 {"u1", dim::velocity, false},
                                 {"u2", dim::velocity, false},
                                 {"crash", dim::none, false}});
  domain_.actions = ActionSet({"FASTER", "SLOWER", "RIGHT"});
  domain_.functions = FunctionRegistry::with_builtins();
}

Eigen::VectorXd Merge::base_noise() const {
  Eigen::VectorXd s(2);
  s << p_.noise_accel, p_.noise_lateral;
  return s;
}

void Merge::refresh_gaps(State& s) const {
  auto gaps = [&](int lane) {
    const double base = s[kPh0 + lane] + s[kU0 + lane] * s[kT];
    const double spacing = s[kSp0 + lane];
    double m = std::fmod(s[kX] - base, spacing);
    if (m < 0) m += spacing;
    return Gaps{spacing - m, m};
  };
  const int lane = std::clamp(static_cast<int>(std::lround(s[kY] / p_.lane_width)), 0, kLanes - 1);
  const Gaps own = gaps(lane);
  s[kFgap] = own.ahead;
  if (lane + 1 < kLanes) {
    const Gaps right = gaps(lane + 1);
    s[kRfront] = right.ahead;
    s[kRback] = right.behind;
  } else {
    s[kRfront] = 0.0;
    s[kRback] = 0.0;
  }
  s[kDright] = (kLanes - 1) * p_.lane_width - s[kY];
  if (std::min(own.ahead, own.behind) < p_.collision_gap) s[kCrash] = 1.0;
}

State Merge::initial_state(Rng& rng) const {
  State s = State::Zero(kCrash + 1);
  // Fast left lane, ego lane, slower target lane.
  s[kU0] = uniform(rng, 25.0, 28.0);
  s[kU1] = uniform(rng, 21.0, 24.0);
  s[kU2] = uniform(rng, 14.0, 17.0);
  for (int l = 0; l < kLanes; ++l) {
    s[kSp0 + l] = uniform(rng, p_.spacing_lo, p_.spacing_hi);
    s[kPh0 + l] = uniform(rng, 0.0, s[kSp0 + l]);
  }
  s[kPh1] = -0.5 * s[kSp1];  // ego starts mid-gap in its lane
  s[kY] = p_.lane_width;
  s[kV] = s[kU1] + uniform(rng, -1.0, 1.0);
  refresh_gaps(s);
  return s;
}

State Merge::step(const State& s, const Eigen::VectorXd& z) const {
  State n = s;
  n[kT] = s[kT] + p_.dt;
  n[kX] = s[kX] + s[kV] * p_.dt;
  n[kV] = std::clamp(s[kV] + z[0] * p_.dt, 0.0, p_.v_cap);
  n[kY] = std::clamp(s[kY] + z[1] * p_.dt, 0.0, (kLanes - 1) * p_.lane_width);
  refresh_gaps(n);
  return n;
}

Eigen::VectorXd Merge::action_mean(ActionId a, const State& s) const {
  Eigen::VectorXd m(2);
  // Speed changes ease off near the cruise band, as a driver would.
  switch (a) {
    case 0: m << std::min(p_.accel, (p_.v_cruise - s[kV]) / p_.relax), 0.0; break;  // FASTER
    case 1: m << std::max(-p_.brake, (p_.v_min - s[kV]) / p_.relax), 0.0; break;   // SLOWER
    default: m << 0.0, p_.lateral_speed; break;   // RIGHT
  }
  return m;
}

bool Merge::task_success(const Trajectory& traj) const {
  if (traj.states.empty()) return false;
  const State& last = traj.states.back();
  return last[kDright] < 0.5 * p_.lane_width && last[kCrash] == 0.0;
}

Policy Merge::gt_policy() const { return parse_policy(kGroundTruth, domain_); }

}  // namespace plunder
