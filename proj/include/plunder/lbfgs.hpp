#pragma once

#include <Eigen/Core>

#include <functional>
#include <vector>

namespace plunder {

struct LbfgsOptions {
  int memory = 8;
  int max_iterations = 100;
  double gradient_tolerance = 1e-6;   // on the projected gradient, infinity norm
  double function_tolerance = 1e-10;  // relative decrease
  int max_backtracks = 40;
  double armijo = 1e-4;
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> history;  // objective after each accepted step, non-increasing
};

/// f(x, grad) returns the objective; fills `grad` when non-null.
using Objective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

/// Box-constrained L-BFGS minimization: two-loop recursion direction,
/// projection onto [lower, upper], Armijo backtracking. Every accepted step
/// strictly decreases the objective.
LbfgsResult minimize_lbfgs(const Objective& f, Eigen::VectorXd x0, const Eigen::VectorXd& lower,
                           const Eigen::VectorXd& upper, const LbfgsOptions& options = {});

}  // namespace plunder
