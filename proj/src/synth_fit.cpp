#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "plunder/log.hpp"
#include "plunder/synth.hpp"

namespace plunder {

namespace {

constexpr double kTiny = 1e-300;

// Flattened guard with feature columns resolved once, so repeated
// likelihood evaluations during a fit allocate nothing.
class CompiledGuard {
 public:
  CompiledGuard(const Guard& g, FeatureTable& table) : rows_(static_cast<Eigen::Index>(table.rows())) {
    Eigen::Index offset = 0;
    build(g, table, offset);
    params_ = offset;
    p_.assign(nodes_.size(), Eigen::ArrayXd(rows_));
    q_.assign(nodes_.size(), Eigen::ArrayXd(rows_));
    adj_.assign(nodes_.size(), Eigen::ArrayXd(rows_));
  }

  Eigen::Index parameters() const { return params_; }

  // Parameters in guard_parameters order.
  double loglik(const Eigen::VectorXd& x, const GuardData& data, Eigen::VectorXd* grad) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) forward(i, x);
    const std::size_t root = nodes_.size() - 1;
    p_[root] = p_[root].max(kTiny);
    q_[root] = q_[root].max(kTiny);
    const double ll = (data.weight * (data.label * p_[root].log() + (1.0 - data.label) * q_[root].log())).sum();
    if (!grad) return ll;
    grad->setZero(params_);
    adj_[root] = data.weight * (data.label / p_[root] - (1.0 - data.label) / q_[root]);
    for (std::size_t i = nodes_.size(); i-- > 0;) backward(i, x, *grad);
    return ll;
  }

 private:
  struct Node {
    Guard::Kind kind;
    bool constant = false;
    const Eigen::ArrayXd* column = nullptr;
    std::size_t left = 0, right = 0;
    Eigen::Index param = 0;
  };

  std::size_t build(const Guard& g, FeatureTable& table, Eigen::Index& offset) {
    Node n{g.kind};
    if (g.is_leaf()) {
      n.param = offset;
      if (g.prob.kind == ProbExpr::Kind::Constant) {
        n.constant = true;
        offset += 1;
      } else {
        n.column = &table.values(g.prob.feature);
        offset += 2;
      }
    } else {
      n.left = build(g.children[0], table, offset);
      n.right = build(g.children[1], table, offset);
    }
    nodes_.push_back(n);
    return nodes_.size() - 1;
  }

  void forward(std::size_t i, const Eigen::VectorXd& x) {
    const Node& n = nodes_[i];
    Eigen::ArrayXd& p = p_[i];
    Eigen::ArrayXd& q = q_[i];
    if (n.kind == Guard::Kind::Flip) {
      if (n.constant) {
        p.setConstant(x[n.param]);
        q.setConstant(1.0 - x[n.param]);
        return;
      }
      const double x0 = x[n.param], k = x[n.param + 1];
      // One exponential per row: e = exp(-|u|) gives both tails without cancellation.
      for (Eigen::Index r = 0; r < rows_; ++r) {
        const double u = k * ((*n.column)[r] - x0);
        const double e = std::exp(-std::abs(u));
        const double small = e / (1.0 + e);
        const double large = 1.0 / (1.0 + e);
        p[r] = u >= 0 ? large : small;
        q[r] = u >= 0 ? small : large;
      }
      return;
    }
    const Eigen::ArrayXd &pa = p_[n.left], &qa = q_[n.left], &pb = p_[n.right], &qb = q_[n.right];
    if (n.kind == Guard::Kind::And) {
      p = pa * pb;
      q = qa + pa * qb;
    } else {
      q = qa * qb;
      p = pa + qa * pb;
    }
  }

  void backward(std::size_t i, const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    const Node& n = nodes_[i];
    const Eigen::ArrayXd& adj = adj_[i];
    if (n.kind == Guard::Kind::Flip) {
      if (n.constant) {
        grad[n.param] += adj.sum();
        return;
      }
      const double x0 = x[n.param], k = x[n.param + 1];
      double gx = 0.0, gk = 0.0;
      for (Eigen::Index r = 0; r < rows_; ++r) {
        const double d = adj[r] * p_[i][r] * q_[i][r];
        gx += d;
        gk += d * ((*n.column)[r] - x0);
      }
      grad[n.param] += -k * gx;
      grad[n.param + 1] += gk;
      return;
    }
    if (n.kind == Guard::Kind::And) {
      adj_[n.left] = adj * p_[n.right];
      adj_[n.right] = adj * p_[n.left];
    } else {
      adj_[n.left] = adj * q_[n.right];
      adj_[n.right] = adj * q_[n.left];
    }
  }

  Eigen::Index rows_;
  Eigen::Index params_ = 0;
  std::vector<Node> nodes_;
  std::vector<Eigen::ArrayXd> p_, q_, adj_;
};

void collect_params(const Guard& g, std::vector<double>& out) {
  if (g.is_leaf()) {
    if (g.prob.kind == ProbExpr::Kind::Constant) {
      out.push_back(g.prob.r);
    } else {
      out.push_back(g.prob.x0);
      out.push_back(g.prob.k);
    }
    return;
  }
  for (const Guard& c : g.children) collect_params(c, out);
}

void assign_params(Guard& g, const Eigen::VectorXd& params, Eigen::Index& offset) {
  if (g.is_leaf()) {
    if (g.prob.kind == ProbExpr::Kind::Constant) {
      g.prob.r = params[offset++];
    } else {
      g.prob.x0 = params[offset++];
      g.prob.k = params[offset++];
    }
    return;
  }
  for (Guard& c : g.children) assign_params(c, params, offset);
}

void collect_leaves(const Guard& g, std::vector<const ProbExpr*>& out) {
  if (g.is_leaf()) {
    out.push_back(&g.prob);
    return;
  }
  for (const Guard& c : g.children) collect_leaves(c, out);
}

// Optimization runs in coordinates where each logistic leaf sees its feature
// standardized: x0 = mean + sd * u, k = v / sd.
struct ParamMap {
  Eigen::VectorXd offset, scale_x, lower, upper;
  std::vector<bool> is_k;

  Eigen::VectorXd to_raw(const Eigen::VectorXd& z) const {
    Eigen::VectorXd raw(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i)
      raw[i] = is_k[static_cast<std::size_t>(i)] ? z[i] / scale_x[i] : offset[i] + scale_x[i] * z[i];
    return raw;
  }
  Eigen::VectorXd to_normalized(const Eigen::VectorXd& raw) const {
    Eigen::VectorXd z(raw.size());
    for (Eigen::Index i = 0; i < raw.size(); ++i)
      z[i] = is_k[static_cast<std::size_t>(i)] ? raw[i] * scale_x[i] : (raw[i] - offset[i]) / scale_x[i];
    return z;
  }
  // d raw / d z, per coordinate.
  double jacobian(Eigen::Index i) const { return is_k[static_cast<std::size_t>(i)] ? 1.0 / scale_x[i] : scale_x[i]; }
};

struct ColumnStats {
  double mean = 0.0, sd = 1.0, min = 0.0, max = 0.0;
};

ColumnStats column_stats(const Eigen::ArrayXd& x) {
  ColumnStats s;
  if (x.size() == 0) return s;
  s.mean = x.mean();
  s.min = x.minCoeff();
  s.max = x.maxCoeff();
  const double var = (x - s.mean).square().mean();
  s.sd = var > 1e-18 ? std::sqrt(var) : 1.0;
  return s;
}

ParamMap build_param_map(const Guard& sketch, FeatureTable& table, const SynthConfig& cfg,
                         std::vector<ColumnStats>& stats) {
  std::vector<const ProbExpr*> leaves;
  collect_leaves(sketch, leaves);
  const auto n = static_cast<Eigen::Index>(parameter_count(sketch));
  ParamMap m;
  m.offset.setZero(n);
  m.scale_x.setOnes(n);
  m.lower.resize(n);
  m.upper.resize(n);
  m.is_k.assign(static_cast<std::size_t>(n), false);
  Eigen::Index i = 0;
  for (const ProbExpr* leaf : leaves) {
    if (leaf->kind == ProbExpr::Kind::Constant) {
      m.lower[i] = cfg.r_epsilon;
      m.upper[i] = 1.0 - cfg.r_epsilon;
      stats.push_back({});
      ++i;
      continue;
    }
    const ColumnStats s = column_stats(table.values(leaf->feature));
    stats.push_back(s);
    m.offset[i] = s.mean;
    m.scale_x[i] = s.sd;
    m.lower[i] = (s.min - s.mean) / s.sd - 1.0;
    m.upper[i] = (s.max - s.mean) / s.sd + 1.0;
    ++i;
    m.scale_x[i] = s.sd;
    m.is_k[static_cast<std::size_t>(i)] = true;
    m.lower[i] = -cfg.k_max;
    m.upper[i] = cfg.k_max;
    ++i;
  }
  return m;
}

Eigen::VectorXd random_start(const Guard& sketch, FeatureTable& table, const ParamMap& m,
                             double base_rate, bool first, Rng& rng) {
  std::vector<const ProbExpr*> leaves;
  collect_leaves(sketch, leaves);
  Eigen::VectorXd z(m.lower.size());
  Eigen::Index i = 0;
  const auto rows = table.rows();
  for (const ProbExpr* leaf : leaves) {
    if (leaf->kind == ProbExpr::Kind::Constant) {
      z[i] = first ? base_rate : uniform(rng, 0.05, 0.95);
      ++i;
      continue;
    }
    const Eigen::ArrayXd& col = table.values(leaf->feature);
    const auto row = std::min<std::size_t>(rows - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(rows)));
    z[i] = (col[static_cast<Eigen::Index>(row)] - m.offset[i]) / m.scale_x[i];
    ++i;
    const double mag = uniform(rng, 0.5, 4.0);
    z[i] = uniform01(rng) < 0.5 ? -mag : mag;
    ++i;
  }
  return z.cwiseMax(m.lower).cwiseMin(m.upper);
}

}  // namespace

double TransitionExamples::total_weight() const {
  double w = 0.0;
  for (const Example& e : items) w += e.weight;
  return w;
}

TransitionExamples collect_examples(std::span<const Trajectory> demos,
                                    const std::vector<std::vector<std::vector<ActionId>>>& sequences,
                                    std::size_t cap, std::uint64_t seed) {
  if (sequences.size() != demos.size()) throw Error("collect_examples: one sample set per demonstration");
  using Key = std::tuple<std::size_t, std::size_t, ActionId, ActionId>;
  std::map<Key, double> counts;
  for (std::size_t d = 0; d < demos.size(); ++d) {
    // Each demonstrated step carries unit total weight however many samples it has.
    const double w = 1.0 / static_cast<double>(std::max<std::size_t>(1, sequences[d].size()));
    for (const auto& seq : sequences[d]) {
      if (seq.size() != demos[d].size()) throw Error("collect_examples: label sequence length mismatch");
      for (std::size_t t = 1; t < seq.size(); ++t) counts[{d, t, seq[t - 1], seq[t]}] += w;
    }
  }
  std::vector<std::pair<Key, double>> kept(counts.begin(), counts.end());
  if (cap > 0 && kept.size() > cap) {
    Rng rng(seed);
    std::shuffle(kept.begin(), kept.end(), rng);
    kept.resize(cap);
    std::sort(kept.begin(), kept.end());
  }

  TransitionExamples ex;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> state_index;
  for (const auto& [key, w] : kept) {
    const auto [d, t, prev, next] = key;
    auto [it, inserted] = state_index.try_emplace({d, t}, ex.states.size());
    if (inserted) ex.states.push_back(demos[d].states[t]);
    ex.items.push_back({it->second, prev, next, w});
  }
  return ex;
}

double policy_log_posterior(const Policy& pi, const TransitionExamples& ex, const Domain& domain,
                            double lambda, double log_floor) {
  // Distributions depend only on (state, prev); examples are sorted so those repeat consecutively.
  double total = 0.0;
  std::size_t cached_state = static_cast<std::size_t>(-1);
  ActionId cached_prev = 0;
  Eigen::VectorXd dist;
  for (const Example& e : ex.items) {
    if (e.state != cached_state || e.prev != cached_prev) {
      dist = transition_distribution(pi, e.prev, ex.states[e.state], domain);
      cached_state = e.state;
      cached_prev = e.prev;
    }
    const double p = dist[static_cast<Eigen::Index>(e.next)];
    total += e.weight * std::max(p > 0 ? std::log(p) : log_floor, log_floor);
  }
  return total - lambda * static_cast<double>(ast_size(pi));
}

Eigen::VectorXd guard_parameters(const Guard& g) {
  std::vector<double> v;
  collect_params(g, v);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Guard with_parameters(Guard g, const Eigen::VectorXd& params) {
  Eigen::Index offset = 0;
  assign_params(g, params, offset);
  if (offset != params.size()) throw Error("with_parameters: parameter count mismatch");
  return g;
}

std::size_t parameter_count(const Guard& g) {
  if (g.is_leaf()) return g.prob.kind == ProbExpr::Kind::Constant ? 1 : 2;
  return parameter_count(g.children[0]) + parameter_count(g.children[1]);
}

FeatureTable::FeatureTable(std::vector<State> states, const Domain& domain)
    : states_(std::move(states)), domain_(&domain) {}

const Eigen::ArrayXd& FeatureTable::values(const Feature& f) {
  const std::string key = to_string(f);
  auto it = cache_.find(key);
  if (it != cache_.end()) return *it->second;
  auto col = std::make_unique<Eigen::ArrayXd>(static_cast<Eigen::Index>(states_.size()));
  bool warned = false;
  for (std::size_t i = 0; i < states_.size(); ++i) {
    double x = eval_feature(f, states_[i], *domain_);
    if (!std::isfinite(x)) {
      if (!warned) log().warn("non-finite values of {} clamped for fitting", key);
      warned = true;
      x = std::isnan(x) ? 0.0 : std::copysign(1e12, x);
    }
    (*col)[static_cast<Eigen::Index>(i)] = x;
  }
  return *cache_.emplace(key, std::move(col)).first->second;
}

double guard_loglik(const Guard& g, FeatureTable& table, const GuardData& data, Eigen::VectorXd* grad) {
  if (table.rows() == 0) {
    if (grad) grad->setZero(static_cast<Eigen::Index>(parameter_count(g)));
    return 0.0;
  }
  CompiledGuard compiled(g, table);
  return compiled.loglik(guard_parameters(g), data, grad);
}

namespace {

std::pair<FeatureTable, GuardData> make_binary(std::span<const State> positives,
                                               std::span<const State> negatives, const Domain& domain) {
  std::vector<State> rows(positives.begin(), positives.end());
  rows.insert(rows.end(), negatives.begin(), negatives.end());
  const auto n = static_cast<Eigen::Index>(rows.size());
  GuardData data{Eigen::ArrayXd::Zero(n), Eigen::ArrayXd::Ones(n)};
  data.label.head(static_cast<Eigen::Index>(positives.size())).setOnes();
  return {FeatureTable(std::move(rows), domain), std::move(data)};
}

}  // namespace

double guard_loglik(const Guard& g, std::span<const State> positives, std::span<const State> negatives,
                    const Domain& domain, Eigen::VectorXd* grad) {
  auto [table, data] = make_binary(positives, negatives, domain);
  return guard_loglik(g, table, data, grad);
}

GuardFit fit_guard_params(const Guard& sketch, FeatureTable& table, const GuardData& data,
                          const SynthConfig& cfg, Rng& rng, bool warm_start) {
  GuardFit best{sketch, -std::numeric_limits<double>::infinity(), false};
  if (table.rows() == 0) {
    best.loglik = 0.0;
    best.converged = true;
    return best;
  }
  std::vector<ColumnStats> stats;
  const ParamMap map = build_param_map(sketch, table, cfg, stats);
  const double total_w = std::max(data.weight.sum(), kTiny);
  const double base_rate =
      std::clamp((data.weight * data.label).sum() / total_w, cfg.r_epsilon, 1.0 - cfg.r_epsilon);

  CompiledGuard compiled(sketch, table);
  Eigen::VectorXd raw_grad;
  const Objective objective = [&](const Eigen::VectorXd& z, Eigen::VectorXd* grad) {
    const Eigen::VectorXd raw = map.to_raw(z);
    if (!grad) return -compiled.loglik(raw, data, nullptr) / total_w;
    const double ll = compiled.loglik(raw, data, &raw_grad);
    grad->resize(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) (*grad)[i] = -raw_grad[i] * map.jacobian(i) / total_w;
    return -ll / total_w;
  };

  std::vector<Eigen::VectorXd> starts;
  if (warm_start)
    starts.push_back(map.to_normalized(guard_parameters(sketch)).cwiseMax(map.lower).cwiseMin(map.upper));
  for (int r = 0; r < std::max(1, cfg.restarts); ++r)
    starts.push_back(random_start(sketch, table, map, base_rate, r == 0, rng));

  for (const Eigen::VectorXd& z0 : starts) {
    const LbfgsResult res = minimize_lbfgs(objective, z0, map.lower, map.upper, cfg.lbfgs);
    const double ll = -res.value * total_w;
    if (ll > best.loglik) {
      best.guard = with_parameters(sketch, map.to_raw(res.x));
      best.loglik = ll;
    }
    best.converged = best.converged || res.converged;
  }
  return best;
}

GuardFit fit_guard_params(const Guard& sketch, std::span<const State> positives,
                          std::span<const State> negatives, const Domain& domain,
                          const SynthConfig& cfg, Rng& rng, bool warm_start) {
  auto [table, data] = make_binary(positives, negatives, domain);
  return fit_guard_params(sketch, table, data, cfg, rng, warm_start);
}

}  // namespace plunder
