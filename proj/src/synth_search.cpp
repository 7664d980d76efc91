#include <algorithm>
#include <cmath>
#include <set>

#include "plunder/log.hpp"
#include "plunder/synth.hpp"

namespace plunder {

namespace {

bool is_difference(const Feature& f) { return f.kind == Feature::Kind::Apply && f.name == "-"; }

bool well_typed(const Feature& f, const Domain& domain) {
  try {
    check_dimensions(f, domain);
    return true;
  } catch (const Error&) {
    return false;
  }
}

// Canonical text: commutative operands sorted, and a - b identified with
// b - a since a logistic over either is the same family.
std::string feature_key(const Feature& f) {
  if (f.kind != Feature::Kind::Apply) return to_string(f);
  std::vector<std::string> args;
  for (const Feature& a : f.args) args.push_back(feature_key(a));
  if (f.name == "+" || f.name == "-") std::sort(args.begin(), args.end());
  std::string out = f.name + "(";
  for (const auto& a : args) out += a + ",";
  return out + ")";
}

std::vector<const Function*> searchable_functions(const Domain& domain) {
  std::vector<const Function*> out;
  for (const Function& fn : domain.functions.all())
    if (fn.searchable) out.push_back(&fn);
  return out;
}

// All ways to fill the argument list of `fn` with `fixed` at slot `slot` and
// the remaining slots drawn from `fillers`.
void fill_arguments(const Function& fn, std::size_t slot, const Feature& fixed,
                    const std::vector<Feature>& fillers, std::vector<Feature>& args, std::size_t pos,
                    std::vector<std::vector<Feature>>& out) {
  if (pos == fn.arity) {
    out.push_back(args);
    return;
  }
  if (pos == slot) {
    args[pos] = fixed;
    fill_arguments(fn, slot, fixed, fillers, args, pos + 1, out);
    return;
  }
  for (const Feature& f : fillers) {
    args[pos] = f;
    fill_arguments(fn, slot, fixed, fillers, args, pos + 1, out);
  }
}

// Applications of searchable functions with `inner` at some argument slot and
// every other slot filled from `fillers`. Differences never nest and never
// subtract a term from itself.
std::vector<Feature> wrappings(const Feature& inner, const std::vector<Feature>& fillers,
                               const Domain& domain) {
  std::vector<Feature> out;
  for (const Function* fn : searchable_functions(domain)) {
    if (fn->arity == 0) continue;
    for (std::size_t slot = 0; slot < fn->arity; ++slot) {
      std::vector<std::vector<Feature>> arg_lists;
      std::vector<Feature> args(fn->arity);
      fill_arguments(*fn, slot, inner, fillers, args, 0, arg_lists);
      for (auto& a : arg_lists) {
        if (fn->name == "-") {
          if (is_difference(a[0]) || is_difference(a[1]) || a[0] == a[1]) continue;
        }
        Feature f = Feature::apply(fn->name, std::move(a));
        if (well_typed(f, domain)) out.push_back(std::move(f));
      }
    }
  }
  return out;
}

void feature_nodes(Feature& f, std::vector<Feature*>& out) {
  out.push_back(&f);
  for (Feature& a : f.args) feature_nodes(a, out);
}

void guard_nodes(Guard& g, std::vector<Guard*>& out) {
  out.push_back(&g);
  for (Guard& c : g.children) guard_nodes(c, out);
}

std::string sketch_key_impl(const Guard& g) {
  if (g.is_leaf()) {
    if (g.prob.kind == ProbExpr::Kind::Constant) return "c";
    return "l[" + feature_key(g.prob.feature) + "]";
  }
  std::string a = sketch_key_impl(g.children[0]);
  std::string b = sketch_key_impl(g.children[1]);
  if (b < a) std::swap(a, b);
  return (g.kind == Guard::Kind::And ? "&(" : "|(") + a + "," + b + ")";
}

Guard logistic_leaf(Feature f) { return Guard::flip(ProbExpr::logistic(std::move(f), 0.0, 0.0)); }
Guard constant_leaf(double r = 0.5) { return Guard::flip(ProbExpr::constant(r)); }

bool has_logistic(const Guard& g) {
  if (g.is_leaf()) return g.prob.kind == ProbExpr::Kind::Logistic;
  return has_logistic(g.children[0]) || has_logistic(g.children[1]);
}

const Rule* find_rule(const Policy& pi, ActionId from, ActionId to) {
  for (const Rule& r : pi.rules)
    if (r.from == from && r.to == to) return &r;
  return nullptr;
}

// Per-kind accumulator with a cap applied by seeded shuffle.
class SketchBatch {
 public:
  SketchBatch(ActionId from, ActionId to, const Domain& domain) : from_(from), to_(to), domain_(domain) {}

  void add(Guard g, const std::string& provenance, bool warm) {
    pending_.push_back({from_, to_, std::move(g), provenance, warm});
  }

  void flush(std::size_t budget, Rng& rng, std::vector<Sketch>& out, std::set<std::string>& seen) {
    std::vector<Sketch> fresh;
    for (Sketch& s : pending_) {
      if (!valid(s.guard)) continue;
      if (seen.count(sketch_key(s.guard))) continue;
      fresh.push_back(std::move(s));
    }
    pending_.clear();
    if (budget > 0 && fresh.size() > budget) {
      std::shuffle(fresh.begin(), fresh.end(), rng);
      fresh.resize(budget);
    }
    for (Sketch& s : fresh)
      if (seen.insert(sketch_key(s.guard)).second) out.push_back(std::move(s));
  }

 private:
  bool valid(const Guard& g) const {
    if (!g.is_leaf()) return valid(g.children[0]) && valid(g.children[1]);
    return g.prob.kind == ProbExpr::Kind::Constant || well_typed(g.prob.feature, domain_);
  }

  ActionId from_, to_;
  const Domain& domain_;
  std::vector<Sketch> pending_;
};

}  // namespace

std::string sketch_key(const Guard& g) { return sketch_key_impl(g); }

std::vector<Feature> atomic_features(const Domain& domain) {
  std::vector<Feature> out;
  for (const Variable& v : domain.signature.variables())
    if (v.searchable) out.push_back(Feature::var(v.name));
  return out;
}

std::vector<Feature> feature_pool(const Domain& domain, int depth) {
  const std::vector<Feature> atoms = atomic_features(domain);
  std::vector<Feature> pool = atoms;
  std::set<std::string> seen;
  for (const Feature& f : atoms) seen.insert(feature_key(f));
  std::vector<Feature> frontier = atoms;
  for (int d = 2; d <= depth; ++d) {
    std::vector<Feature> next;
    for (const Feature& inner : frontier)
      for (Feature& f : wrappings(inner, atoms, domain))
        if (seen.insert(feature_key(f)).second) next.push_back(std::move(f));
    pool.insert(pool.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return pool;
}

std::vector<Sketch> enumerate_neighborhood(const Policy& pi, ActionId from, ActionId to,
                                           const Domain& domain, const SynthConfig& cfg, Rng& rng) {
  const std::vector<Feature> atoms = atomic_features(domain);
  // Differences may pair a term with a one-step application, so two-step
  // features like f(x, y) - z are reachable from z directly.
  const std::vector<Feature> fillers = feature_pool(domain, 2);
  std::vector<Sketch> out;
  std::set<std::string> seen;
  SketchBatch batch(from, to, domain);

  const Rule* rule = find_rule(pi, from, to);
  if (rule) {
    const Guard& g = rule->guard;
    batch.add(g, "keep", true);
    batch.flush(0, rng, out, seen);

    Guard probe = g;
    std::vector<Guard*> nodes;
    guard_nodes(probe, nodes);
    const std::size_t count = nodes.size();
    auto mutate = [&](std::size_t idx, auto&& edit) {
      Guard copy = g;
      std::vector<Guard*> n;
      guard_nodes(copy, n);
      edit(*n[idx]);
      return copy;
    };

    // Add a predicate: refine a constant leaf, or combine with a new leaf.
    for (std::size_t i = 0; i < count; ++i) {
      if (!nodes[i]->is_leaf() || nodes[i]->prob.kind != ProbExpr::Kind::Constant) continue;
      for (const Feature& f : atoms)
        batch.add(mutate(i, [&](Guard& n) { n = logistic_leaf(f); }), "add", true);
    }
    if (has_logistic(g)) {
      for (const Feature& f : atoms) {
        batch.add(Guard::conj(g, logistic_leaf(f)), "add", true);
        batch.add(Guard::disj(g, logistic_leaf(f)), "add", true);
      }
    }
    batch.flush(cfg.mutation_budget, rng, out, seen);

    // Remove a predicate.
    for (std::size_t i = 0; i < count; ++i) {
      if (nodes[i]->is_leaf()) continue;
      for (std::size_t c = 0; c < 2; ++c)
        batch.add(mutate(i, [&](Guard& n) { n = Guard(n.children[c]); }), "remove", true);
    }
    if (g.is_leaf() && g.prob.kind == ProbExpr::Kind::Logistic) batch.add(constant_leaf(), "remove", false);
    batch.flush(cfg.mutation_budget, rng, out, seen);

    // Swap a connective.
    for (std::size_t i = 0; i < count; ++i) {
      if (nodes[i]->is_leaf()) continue;
      batch.add(mutate(i, [](Guard& n) {
                  n.kind = n.kind == Guard::Kind::And ? Guard::Kind::Or : Guard::Kind::And;
                }),
                "swap", true);
    }
    batch.flush(cfg.mutation_budget, rng, out, seen);

    // Wrap a feature subterm in a function application, or strip one.
    std::vector<Guard> wrapped, stripped;
    for (std::size_t i = 0; i < count; ++i) {
      if (!nodes[i]->is_leaf() || nodes[i]->prob.kind != ProbExpr::Kind::Logistic) continue;
      Feature probe_f = nodes[i]->prob.feature;
      std::vector<Feature*> fnodes;
      feature_nodes(probe_f, fnodes);
      for (std::size_t j = 0; j < fnodes.size(); ++j) {
        auto with_subterm = [&](const Feature& replacement) {
          return mutate(i, [&](Guard& n) {
            std::vector<Feature*> fn;
            feature_nodes(n.prob.feature, fn);
            *fn[j] = replacement;
          });
        };
        for (const Feature& w : wrappings(*fnodes[j], fillers, domain)) wrapped.push_back(with_subterm(w));
        if (fnodes[j]->kind == Feature::Kind::Apply)
          for (const Feature& arg : fnodes[j]->args)
            if (arg.kind != Feature::Kind::Const) stripped.push_back(with_subterm(arg));
      }
    }
    for (Guard& w : wrapped) batch.add(std::move(w), "wrap", true);
    batch.flush(cfg.mutation_budget, rng, out, seen);
    for (Guard& s : stripped) batch.add(std::move(s), "strip", true);
    batch.flush(cfg.mutation_budget, rng, out, seen);
  }

  batch.add(constant_leaf(), "base", false);
  for (const Feature& f : fillers) batch.add(logistic_leaf(f), "base", false);
  batch.flush(0, rng, out, seen);
  return out;
}

std::vector<Sketch> enumerate_full(ActionId from, ActionId to, const Domain& domain, const SynthConfig& cfg) {
  const std::vector<Feature> pool = feature_pool(domain, cfg.feature_depth);
  std::vector<Sketch> out;
  out.push_back({from, to, constant_leaf(), "full", false});
  std::vector<Guard> leaves;
  for (const Feature& f : pool) leaves.push_back(logistic_leaf(f));
  for (const Guard& l : leaves) out.push_back({from, to, l, "full", false});
  if (cfg.guard_depth >= 2) {
    for (std::size_t i = 0; i < leaves.size(); ++i)
      for (std::size_t j = i + 1; j < leaves.size(); ++j) {
        out.push_back({from, to, Guard::conj(leaves[i], leaves[j]), "full", false});
        out.push_back({from, to, Guard::disj(leaves[i], leaves[j]), "full", false});
      }
  }
  return out;
}

namespace {

// Replaces, inserts or (with nullopt) drops the rule for (from, to).
Policy with_rule(const Policy& pi, ActionId from, ActionId to, const std::optional<Guard>& guard) {
  Policy out;
  bool placed = false;
  for (const Rule& r : pi.rules) {
    if (r.from == from && r.to == to) {
      if (guard && !placed) out.rules.push_back({from, *guard, to});
      placed = true;
      continue;
    }
    out.rules.push_back(r);
  }
  if (guard && !placed) out.rules.push_back({from, *guard, to});
  return out;
}

}  // namespace

Policy synthesize(const Policy& prev, const TransitionExamples& examples, const Domain& domain,
                  const SynthConfig& cfg, Rng& rng, SynthReport* report) {
  const std::size_t na = domain.actions.size();
  SynthReport local;
  local.examples = examples.items.size();

  // Best guard per transition; nullopt means "no rule".
  struct Choice {
    ActionId from, to;
    std::optional<Guard> guard;
  };
  std::vector<Choice> choices;

  for (ActionId a = 0; a < na; ++a) {
    std::vector<const Example*> rows;
    for (const Example& e : examples.items)
      if (e.prev == a) rows.push_back(&e);
    if (rows.empty()) continue;  // nothing observed from a: its rules stay as they are

    std::vector<State> states;
    states.reserve(rows.size());
    for (const Example* e : rows) states.push_back(examples.states[e->state]);
    FeatureTable table(std::move(states), domain);
    const auto n = static_cast<Eigen::Index>(rows.size());

    for (ActionId b = 0; b < na; ++b) {
      if (b == a) continue;
      GuardData data{Eigen::ArrayXd(n), Eigen::ArrayXd(n)};
      for (Eigen::Index i = 0; i < n; ++i) {
        data.label[i] = rows[static_cast<std::size_t>(i)]->next == b ? 1.0 : 0.0;
        data.weight[i] = rows[static_cast<std::size_t>(i)]->weight;
      }
      if ((data.label * data.weight).sum() <= 0.0) {
        choices.push_back({a, b, std::nullopt});
        continue;
      }
      const std::vector<Sketch> sketches = cfg.search == SearchMode::Full
                                               ? enumerate_full(a, b, domain, cfg)
                                               : enumerate_neighborhood(prev, a, b, domain, cfg, rng);
      // Screen every sketch cheaply, then refit the most promising ones.
      SynthConfig screen = cfg;
      screen.restarts = cfg.screen_restarts;
      std::vector<std::pair<double, std::size_t>> ranked;
      std::vector<GuardFit> fits;
      fits.reserve(sketches.size());
      auto score_of = [&](const GuardFit& f) {
        return f.loglik - cfg.lambda * static_cast<double>(1 + ast_size(f.guard));
      };
      for (const Sketch& s : sketches) {
        fits.push_back(fit_guard_params(s.guard, table, data, screen, rng, s.warm_start));
        ++local.sketches_fit;
        ranked.emplace_back(-score_of(fits.back()), fits.size() - 1);
      }
      std::stable_sort(ranked.begin(), ranked.end(),
                       [](const auto& x, const auto& y) { return x.first < y.first; });
      if (ranked.size() > cfg.refine_top) ranked.resize(cfg.refine_top);
      for (const auto& [neg_score, i] : ranked) {
        const GuardFit refit = fit_guard_params(fits[i].guard, table, data, cfg, rng, true);
        if (refit.loglik > fits[i].loglik) fits[i] = refit;
      }
      std::optional<Guard> best;
      double best_score = -std::numeric_limits<double>::infinity();
      for (const GuardFit& f : fits) {
        if (score_of(f) > best_score) {
          best_score = score_of(f);
          best = f.guard;
        }
      }
      log().debug("{} -> {}: {} sketches, best {:.3f}", domain.actions.name(a), domain.actions.name(b),
                  sketches.size(), best_score);
      choices.push_back({a, b, best});
    }
  }

  std::vector<Policy> candidates{prev};
  Policy assembled = prev;
  for (const Choice& c : choices) {
    assembled = with_rule(assembled, c.from, c.to, c.guard);
    candidates.push_back(with_rule(prev, c.from, c.to, c.guard));
  }
  candidates.insert(candidates.begin() + 1, assembled);

  std::size_t best_idx = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double score = policy_log_posterior(candidates[i], examples, domain, cfg.lambda, cfg.log_floor);
    if (i == 0) local.previous_score = score;
    if (score > best_score) {
      best_score = score;
      best_idx = i;
    }
  }
  local.candidates = candidates.size();
  local.chosen_score = best_score;
  if (report) *report = local;
  return candidates[best_idx];
}

Policy synthesize(const Policy& prev, std::span<const Trajectory> demos,
                  const std::vector<std::vector<std::vector<ActionId>>>& sequences, const Domain& domain,
                  const SynthConfig& cfg, Rng& rng, SynthReport* report) {
  const TransitionExamples ex = collect_examples(demos, sequences, cfg.max_examples, rng());
  return synthesize(prev, ex, domain, cfg, rng, report);
}

}  // namespace plunder
