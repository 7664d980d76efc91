#include "plunder/lbfgs.hpp"

#include <cmath>
#include <deque>

namespace plunder {

LbfgsResult minimize_lbfgs(const Objective& f, Eigen::VectorXd x0, const Eigen::VectorXd& lower,
                           const Eigen::VectorXd& upper, const LbfgsOptions& options) {
  const Eigen::Index n = x0.size();
  LbfgsResult res;
  res.x = x0.cwiseMax(lower).cwiseMin(upper);
  Eigen::VectorXd g(n);
  res.value = f(res.x, &g);
  res.history.push_back(res.value);
  if (!std::isfinite(res.value)) return res;

  std::deque<Eigen::VectorXd> s_hist;
  std::deque<Eigen::VectorXd> y_hist;
  std::deque<double> rho_hist;
  Eigen::VectorXd alpha_buf(options.memory);

  for (res.iterations = 0; res.iterations < options.max_iterations; ++res.iterations) {
    const Eigen::VectorXd projected = res.x - (res.x - g).cwiseMax(lower).cwiseMin(upper);
    if (projected.lpNorm<Eigen::Infinity>() < options.gradient_tolerance) {
      res.converged = true;
      break;
    }

    // Two-loop recursion.
    Eigen::VectorXd d = -g;
    const int m = static_cast<int>(s_hist.size());
    for (int i = m - 1; i >= 0; --i) {
      alpha_buf[i] = rho_hist[i] * s_hist[i].dot(d);
      d -= alpha_buf[i] * y_hist[i];
    }
    if (m > 0) d *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (int i = 0; i < m; ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(d);
      d += (alpha_buf[i] - beta) * s_hist[i];
    }
    // Components pinned at a bound and pushing outward carry no information.
    for (Eigen::Index i = 0; i < n; ++i)
      if ((res.x[i] <= lower[i] && d[i] < 0) || (res.x[i] >= upper[i] && d[i] > 0)) d[i] = 0;
    if (g.dot(d) >= 0) {
      d = -projected;
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    double step = s_hist.empty() ? std::min(1.0, 1.0 / std::max(1e-12, d.lpNorm<Eigen::Infinity>())) : 1.0;
    Eigen::VectorXd x_new;
    double f_new = 0.0;
    bool accepted = false;
    for (int b = 0; b < options.max_backtracks; ++b, step *= 0.5) {
      x_new = (res.x + step * d).cwiseMax(lower).cwiseMin(upper);
      f_new = f(x_new, nullptr);
      if (std::isfinite(f_new) && f_new <= res.value + options.armijo * g.dot(x_new - res.x) &&
          f_new < res.value) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      res.converged = true;  // no descent available along the projected path
      break;
    }

    Eigen::VectorXd g_new(n);
    f_new = f(x_new, &g_new);
    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (static_cast<int>(s_hist.size()) == options.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
    }
    const double decrease = res.value - f_new;
    res.x = x_new;
    res.value = f_new;
    g = g_new;
    res.history.push_back(f_new);
    if (decrease <= options.function_tolerance * (1.0 + std::abs(f_new))) {
      res.converged = true;
      ++res.iterations;
      break;
    }
  }
  return res;
}

}  // namespace plunder
