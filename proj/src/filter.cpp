#include "plunder/filter.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace plunder {

namespace {

double log_sum_exp(std::span<const double> x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

// Row a: cumulative next-action distribution from a.
Eigen::MatrixXd cumulative_transitions(const Policy& policy, const State& s, const Domain& domain) {
  const auto na = static_cast<Eigen::Index>(domain.actions.size());
  Eigen::MatrixXd cum(na, na);
  for (Eigen::Index a = 0; a < na; ++a) {
    const Eigen::VectorXd d = transition_distribution(policy, static_cast<ActionId>(a), s, domain);
    double acc = 0.0;
    for (Eigen::Index b = 0; b < na; ++b) cum(a, b) = (acc += d[b]);
  }
  return cum;
}

ActionId draw(const Eigen::MatrixXd& cum, ActionId from, double u) {
  const auto row = static_cast<Eigen::Index>(from);
  const Eigen::Index n = cum.cols();
  // Scale by the row total so rounding in the cumulative sum cannot leave a gap.
  const double target = u * cum(row, n - 1);
  for (Eigen::Index b = 0; b + 1 < n; ++b)
    if (target < cum(row, b)) return static_cast<ActionId>(b);
  return static_cast<ActionId>(n - 1);
}

}  // namespace

std::vector<std::size_t> resample_systematic(std::span<const double> log_weights, Rng& rng,
                                             std::size_t count) {
  const std::size_t m = log_weights.size();
  if (count == 0) count = m;
  const double total = log_sum_exp(log_weights);
  if (!std::isfinite(total)) throw Error("resampling: no particle has finite weight");

  std::vector<std::size_t> parents(count);
  const double step = 1.0 / static_cast<double>(count);
  double u = uniform01(rng) * step;
  double cum = 0.0;
  std::size_t i = 0;
  for (std::size_t j = 0; j < count; ++j) {
    const double pos = u + static_cast<double>(j) * step;
    while (i + 1 < m && cum + std::exp(log_weights[i] - total) <= pos) {
      cum += std::exp(log_weights[i] - total);
      ++i;
    }
    parents[j] = i;
  }
  return parents;
}

FilterResult run_filter(const Trajectory& traj, const ObservationModel& model, const Policy& policy,
                        const Domain& domain, std::size_t particles, Rng& rng,
                        const FilterOptions& options) {
  if (particles < 2) throw Error("run_filter needs at least two particles");
  const std::size_t steps = traj.size();
  const std::size_t na = domain.actions.size();
  const double log_m = std::log(static_cast<double>(particles));

  FilterResult fr;
  fr.generations.reserve(steps);
  fr.step_log_mean_weights.reserve(steps);

  // Normalized log weights carried between steps (uniform after resampling).
  std::vector<double> carried(particles, -log_m);
  std::vector<double> incremental(particles);
  std::vector<double> combined(particles);
  std::vector<ActionId> proposed(particles);
  std::vector<double> obs_ll(na);

  for (std::size_t t = 0; t < steps; ++t) {
    const State& s = traj.states[t];
    for (std::size_t a = 0; a < na; ++a) obs_ll[a] = obs_log_density(model, traj.observations[t], a, s);

    if (t == 0) {
      for (std::size_t i = 0; i < particles; ++i)
        proposed[i] = std::min(na - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(na)));
    } else {
      const Eigen::MatrixXd cum = cumulative_transitions(policy, s, domain);
      const auto& prev = fr.generations.back();
      for (std::size_t i = 0; i < particles; ++i) proposed[i] = draw(cum, prev[i].action, uniform01(rng));
    }

    for (std::size_t i = 0; i < particles; ++i) {
      incremental[i] = obs_ll[proposed[i]];
      combined[i] = carried[i] + incremental[i];
    }
    const double norm = log_sum_exp(combined);
    if (!std::isfinite(norm)) throw Error("particle filter degenerate at step " + std::to_string(t));
    // carried is normalized, so the log of the weighted mean weight is just `norm`.
    fr.step_log_mean_weights.push_back(norm);
    fr.log_marginal += norm;
    for (double& c : combined) c -= norm;

    bool resample = true;
    if (options.ess_threshold > 0.0) {
      double sq = 0.0;
      for (double c : combined) sq += std::exp(2.0 * c);
      resample = 1.0 / sq < options.ess_threshold * static_cast<double>(particles);
    }

    std::vector<Particle> gen(particles);
    if (resample) {
      const auto parents = resample_systematic(combined, rng);
      for (std::size_t j = 0; j < particles; ++j) {
        const std::size_t p = parents[j];
        gen[j] = {proposed[p], t == 0 ? kNoParent : p, incremental[p]};
      }
      std::fill(carried.begin(), carried.end(), -log_m);
    } else {
      for (std::size_t j = 0; j < particles; ++j) gen[j] = {proposed[j], t == 0 ? kNoParent : j, incremental[j]};
      carried = combined;
    }
    fr.generations.push_back(std::move(gen));
  }
  fr.final_log_weights = Eigen::Map<const Eigen::VectorXd>(carried.data(), static_cast<Eigen::Index>(particles));
  return fr;
}

std::vector<ActionId> lineage(const FilterResult& fr, std::size_t final_index) {
  const std::size_t steps = fr.steps();
  std::vector<ActionId> seq(steps);
  std::size_t idx = final_index;
  for (std::size_t t = steps; t-- > 0;) {
    const Particle& p = fr.generations[t][idx];
    seq[t] = p.action;
    idx = p.parent;
  }
  return seq;
}

std::vector<std::vector<ActionId>> traceback_samples(const FilterResult& fr, std::size_t n, Rng& rng) {
  const std::size_t m = fr.particles();
  if (n > m) throw Error("traceback_samples: more samples than particles");
  std::vector<std::size_t> picks;
  const double uniform_level = -std::log(static_cast<double>(m));
  const bool uniform = (fr.final_log_weights.array() - uniform_level).abs().maxCoeff() < 1e-12;
  if (uniform) {
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {  // partial Fisher-Yates
      const std::size_t j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(m - i));
      std::swap(idx[i], idx[std::min(j, m - 1)]);
    }
    picks.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
  } else {
    picks = resample_systematic(std::span<const double>(fr.final_log_weights.data(), m), rng, n);
  }
  std::vector<std::vector<ActionId>> out;
  out.reserve(n);
  for (std::size_t i : picks) out.push_back(lineage(fr, i));
  return out;
}

std::vector<ActionId> map_lineage(const FilterResult& fr) {
  const std::size_t m = fr.particles();
  if (m == 0) return {};
  // Distinct ancestries can spell the same label sequence, so group by sequence.
  std::map<std::vector<ActionId>, std::pair<double, std::size_t>> counts;
  for (std::size_t i = 0; i < m; ++i) {
    auto seq = lineage(fr, i);
    auto it = counts.try_emplace(std::move(seq), 0.0, i).first;
    it->second.first += std::exp(fr.final_log_weights[static_cast<Eigen::Index>(i)]);
  }
  const std::vector<ActionId>* best = nullptr;
  double best_w = -1.0;
  std::size_t best_first = 0;
  for (const auto& [seq, info] : counts) {
    const double w = info.first;
    if (w > best_w + 1e-12 || (std::abs(w - best_w) <= 1e-12 && info.second < best_first)) {
      best = &seq;
      best_w = w;
      best_first = info.second;
    }
  }
  return *best;
}

Eigen::MatrixXd lineage_marginals(const FilterResult& fr, std::size_t num_actions) {
  const std::size_t m = fr.particles();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(fr.steps()),
                                              static_cast<Eigen::Index>(num_actions));
  for (std::size_t i = 0; i < m; ++i) {
    const double w = std::exp(fr.final_log_weights[static_cast<Eigen::Index>(i)]);
    const auto seq = lineage(fr, i);
    for (std::size_t t = 0; t < seq.size(); ++t)
      out(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(seq[t])) += w;
  }
  return out;
}

ExactPosterior exact_posterior(const Trajectory& traj, const ObservationModel& model,
                               const Policy& policy, const Domain& domain) {
  const auto steps = static_cast<Eigen::Index>(traj.size());
  const auto na = static_cast<Eigen::Index>(domain.actions.size());
  ExactPosterior out;
  out.filtered.resize(steps, na);
  out.smoothed.resize(steps, na);
  if (steps == 0) return out;

  // Scaled observation likelihoods: lik(t, a) = exp(ll - max_t).
  Eigen::MatrixXd lik(steps, na);
  Eigen::VectorXd shift(steps);
  for (Eigen::Index t = 0; t < steps; ++t) {
    for (Eigen::Index a = 0; a < na; ++a)
      lik(t, a) = obs_log_density(model, traj.observations[static_cast<std::size_t>(t)],
                                  static_cast<ActionId>(a), traj.states[static_cast<std::size_t>(t)]);
    shift[t] = lik.row(t).maxCoeff();
    lik.row(t) = (lik.row(t).array() - shift[t]).exp();
  }

  std::vector<Eigen::MatrixXd> trans(static_cast<std::size_t>(steps));
  for (Eigen::Index t = 1; t < steps; ++t) {
    Eigen::MatrixXd m(na, na);
    for (Eigen::Index a = 0; a < na; ++a)
      m.row(a) = transition_distribution(policy, static_cast<ActionId>(a),
                                         traj.states[static_cast<std::size_t>(t)], domain)
                     .transpose();
    trans[static_cast<std::size_t>(t)] = std::move(m);
  }

  Eigen::VectorXd scale(steps);
  Eigen::RowVectorXd alpha = lik.row(0) / static_cast<double>(na);
  for (Eigen::Index t = 0; t < steps; ++t) {
    if (t > 0) alpha = (alpha * trans[static_cast<std::size_t>(t)]).cwiseProduct(lik.row(t));
    scale[t] = alpha.sum();
    if (!(scale[t] > 0)) throw Error("exact_posterior: zero likelihood at step " + std::to_string(t));
    alpha /= scale[t];
    out.filtered.row(t) = alpha;
  }
  out.log_marginal = scale.array().log().sum() + shift.sum();

  Eigen::VectorXd beta = Eigen::VectorXd::Ones(na);
  out.smoothed.row(steps - 1) = out.filtered.row(steps - 1);
  for (Eigen::Index t = steps - 1; t-- > 0;) {
    beta = trans[static_cast<std::size_t>(t + 1)] * lik.row(t + 1).transpose().cwiseProduct(beta) / scale[t + 1];
    Eigen::RowVectorXd post = out.filtered.row(t).cwiseProduct(beta.transpose());
    out.smoothed.row(t) = post / post.sum();
  }
  return out;
}

}  // namespace plunder
