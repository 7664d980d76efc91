#include "plunder/dsl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "plunder/log.hpp"

namespace plunder {

DimensionError::DimensionError(const std::string& subtree, Dimension l, Dimension r)
    : Error("dimension mismatch in '" + subtree + "': " + l.to_string() + " vs " + r.to_string()),
      lhs(l),
      rhs(r) {}

ActionSet::ActionSet(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.empty()) throw Error("action set must not be empty");
  for (std::size_t i = 0; i < names_.size(); ++i)
    for (std::size_t j = i + 1; j < names_.size(); ++j)
      if (names_[i] == names_[j]) throw Error("duplicate action label " + names_[i]);
}

std::optional<ActionId> ActionSet::find(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<ActionId>(it - names_.begin());
}

ActionId ActionSet::at(std::string_view name) const {
  if (auto a = find(name)) return *a;
  throw Error("unknown action label " + std::string(name));
}

Signature::Signature(std::vector<Variable> vars) : vars_(std::move(vars)) {
  for (std::size_t i = 0; i < vars_.size(); ++i)
    for (std::size_t j = i + 1; j < vars_.size(); ++j)
      if (vars_[i].name == vars_[j].name) throw Error("duplicate variable " + vars_[i].name);
}

std::optional<std::size_t> Signature::find(std::string_view name) const {
  for (std::size_t i = 0; i < vars_.size(); ++i)
    if (vars_[i].name == name) return i;
  return std::nullopt;
}

std::size_t Signature::index_of(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw EvalError("unknown variable " + std::string(name));
}

FunctionRegistry FunctionRegistry::with_builtins() {
  FunctionRegistry r;
  r.add({"+", 2, Function::DimRule::Uniform, {}, {},
         [](std::span<const double> x) { return x[0] + x[1]; }, false});
  r.add({"-", 2, Function::DimRule::Uniform, {}, {},
         [](std::span<const double> x) { return x[0] - x[1]; }, true});
  r.add({"mul", 2, Function::DimRule::Product, {}, {},
         [](std::span<const double> x) { return x[0] * x[1]; }, false});
  r.add({"div", 2, Function::DimRule::Quotient, {}, {},
         [](std::span<const double> x) { return x[0] / x[1]; }, false});
  return r;
}

void FunctionRegistry::add(Function f) {
  if (find(f.name)) throw Error("function registered twice: " + f.name);
  if (f.rule == Function::DimRule::Fixed && f.params.size() != f.arity)
    throw Error("function " + f.name + " declares wrong parameter count");
  functions_.push_back(std::move(f));
}

const Function* FunctionRegistry::find(std::string_view name) const {
  for (const auto& f : functions_)
    if (f.name == name) return &f;
  return nullptr;
}

Feature Feature::var(std::string name) {
  Feature f;
  f.kind = Kind::Var;
  f.name = std::move(name);
  return f;
}

Feature Feature::constant(double value, std::optional<Dimension> unit) {
  Feature f;
  f.kind = Kind::Const;
  f.value = value;
  f.unit = unit;
  return f;
}

Feature Feature::apply(std::string function, std::vector<Feature> args) {
  Feature f;
  f.kind = Kind::Apply;
  f.name = std::move(function);
  f.args = std::move(args);
  return f;
}

Feature operator+(Feature a, Feature b) { return Feature::apply("+", {std::move(a), std::move(b)}); }
Feature operator-(Feature a, Feature b) { return Feature::apply("-", {std::move(a), std::move(b)}); }

ProbExpr ProbExpr::constant(double r) {
  ProbExpr p;
  p.kind = Kind::Constant;
  p.r = r;
  return p;
}

ProbExpr ProbExpr::logistic(Feature f, double x0, double k) {
  ProbExpr p;
  p.kind = Kind::Logistic;
  p.feature = std::move(f);
  p.x0 = x0;
  p.k = k;
  return p;
}

Guard Guard::flip(ProbExpr p) {
  Guard g;
  g.kind = Kind::Flip;
  g.prob = std::move(p);
  return g;
}

Guard Guard::conj(Guard a, Guard b) {
  Guard g;
  g.kind = Kind::And;
  g.children = {std::move(a), std::move(b)};
  return g;
}

Guard Guard::disj(Guard a, Guard b) {
  Guard g;
  g.kind = Kind::Or;
  g.children = {std::move(a), std::move(b)};
  return g;
}

// --- dimensions -------------------------------------------------------------

namespace {

// nullopt: the subtree is built from unit-less constants only and adopts
// whatever dimension its context requires.
std::optional<Dimension> infer(const Feature& f, const Domain& domain) {
  switch (f.kind) {
    case Feature::Kind::Var:
      return domain.signature[domain.signature.index_of(f.name)].dim;
    case Feature::Kind::Const:
      return f.unit;
    case Feature::Kind::Apply:
      break;
  }
  const Function* fn = domain.functions.find(f.name);
  if (!fn) throw EvalError("unknown function " + f.name + " in '" + to_string(f) + "'");
  if (fn->arity != f.args.size())
    throw EvalError("function " + f.name + " expects " + std::to_string(fn->arity) +
                    " arguments in '" + to_string(f) + "'");

  std::vector<std::optional<Dimension>> args;
  args.reserve(f.args.size());
  for (const auto& a : f.args) args.push_back(infer(a, domain));

  switch (fn->rule) {
    case Function::DimRule::Fixed:
      for (std::size_t i = 0; i < args.size(); ++i)
        if (args[i] && *args[i] != fn->params[i])
          throw DimensionError(to_string(f), *args[i], fn->params[i]);
      return fn->result;
    case Function::DimRule::Uniform: {
      std::optional<Dimension> common;
      for (const auto& d : args) {
        if (!d) continue;
        if (common && *common != *d) throw DimensionError(to_string(f), *common, *d);
        common = d;
      }
      return common;
    }
    case Function::DimRule::Product:
      if (!args[0] && !args[1]) return std::nullopt;
      return args[0].value_or(dim::none) * args[1].value_or(dim::none);
    case Function::DimRule::Quotient:
      if (!args[0] && !args[1]) return std::nullopt;
      return args[0].value_or(dim::none) / args[1].value_or(dim::none);
  }
  return std::nullopt;
}

void check_guard(const Guard& g, const Domain& domain) {
  if (g.kind != Guard::Kind::Flip) {
    if (g.children.size() != 2) throw Error("connective needs two operands");
    for (const auto& c : g.children) check_guard(c, domain);
    return;
  }
  if (g.prob.kind == ProbExpr::Kind::Constant) {
    if (!(g.prob.r >= 0.0 && g.prob.r <= 1.0))
      throw Error("constant probability out of [0,1]: " + format_number(g.prob.r));
    return;
  }
  check_dimensions(g.prob.feature, domain);
  if (!std::isfinite(g.prob.x0) || !std::isfinite(g.prob.k))
    throw Error("non-finite logistic parameter in '" + to_string(g.prob) + "'");
}

}  // namespace

Dimension check_dimensions(const Feature& f, const Domain& domain) {
  return infer(f, domain).value_or(dim::none);
}

void check_policy(const Policy& policy, const Domain& domain) {
  for (const auto& r : policy.rules) {
    if (r.from >= domain.actions.size() || r.to >= domain.actions.size())
      throw Error("rule refers to an action outside the action set");
    check_guard(r.guard, domain);
  }
}

// --- semantics --------------------------------------------------------------

double eval_feature(const Feature& f, const State& s, const Domain& domain) {
  switch (f.kind) {
    case Feature::Kind::Var: {
      auto i = domain.signature.find(f.name);
      if (!i) throw EvalError("unknown variable " + f.name);
      if (static_cast<Eigen::Index>(*i) >= s.size()) throw EvalError("state shorter than signature");
      return s[static_cast<Eigen::Index>(*i)];
    }
    case Feature::Kind::Const:
      return f.value;
    case Feature::Kind::Apply:
      break;
  }
  const Function* fn = domain.functions.find(f.name);
  if (!fn) throw EvalError("unknown function " + f.name + " in '" + to_string(f) + "'");
  if (fn->arity != f.args.size()) throw EvalError("wrong arity in '" + to_string(f) + "'");
  double buf[8];
  std::vector<double> heap;
  double* args = buf;
  if (f.args.size() > 8) {
    heap.resize(f.args.size());
    args = heap.data();
  }
  for (std::size_t i = 0; i < f.args.size(); ++i) args[i] = eval_feature(f.args[i], s, domain);
  return fn->apply(std::span<const double>(args, f.args.size()));
}

double logistic(double u) {
  if (u >= 0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

double prob_expr_value(const ProbExpr& p, const State& s, const Domain& domain) {
  if (p.kind == ProbExpr::Kind::Constant) return p.r;
  const double x = eval_feature(p.feature, s, domain);
  if (!std::isfinite(x)) {
    log().warn("non-finite feature value in {}; saturating", to_string(p));
    if (std::isnan(x)) return 0.0;
    return (x > 0) == (p.k > 0) ? 1.0 : 0.0;
  }
  return logistic(p.k * (x - p.x0));
}

double guard_probability(const Guard& g, const State& s, const Domain& domain) {
  switch (g.kind) {
    case Guard::Kind::Flip:
      return prob_expr_value(g.prob, s, domain);
    case Guard::Kind::And:
      return guard_probability(g.children[0], s, domain) * guard_probability(g.children[1], s, domain);
    case Guard::Kind::Or: {
      const double a = guard_probability(g.children[0], s, domain);
      const double b = guard_probability(g.children[1], s, domain);
      return a + b - a * b;
    }
  }
  return 0.0;
}

Eigen::VectorXd transition_distribution(const Policy& pi, ActionId prev, const State& s,
                                        const Domain& domain) {
  Eigen::VectorXd dist = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(domain.actions.size()));
  double remaining = 1.0;
  for (const auto& r : pi.rules) {
    if (r.from != prev) continue;
    const double p = guard_probability(r.guard, s, domain);
    dist[static_cast<Eigen::Index>(r.to)] += remaining * p;
    remaining *= 1.0 - p;
  }
  dist[static_cast<Eigen::Index>(prev)] += remaining;
  return dist;
}

namespace {

bool sample_guard(const Guard& g, const State& s, const Domain& domain, Rng& rng) {
  switch (g.kind) {
    case Guard::Kind::Flip:
      return uniform01(rng) < prob_expr_value(g.prob, s, domain);
    case Guard::Kind::And: {
      const bool a = sample_guard(g.children[0], s, domain, rng);
      const bool b = sample_guard(g.children[1], s, domain, rng);
      return a && b;
    }
    case Guard::Kind::Or: {
      const bool a = sample_guard(g.children[0], s, domain, rng);
      const bool b = sample_guard(g.children[1], s, domain, rng);
      return a || b;
    }
  }
  return false;
}

}  // namespace

ActionId sample_next_action(const Policy& pi, ActionId prev, const State& s, const Domain& domain,
                            Rng& rng) {
  for (const auto& r : pi.rules) {
    if (r.from != prev) continue;
    if (sample_guard(r.guard, s, domain, rng)) return r.to;
  }
  return prev;
}

// --- size -------------------------------------------------------------------

std::size_t ast_size(const Feature& f) {
  switch (f.kind) {
    case Feature::Kind::Var:
      return 1;
    case Feature::Kind::Const:
      return 2;  // node + literal
    case Feature::Kind::Apply: {
      std::size_t n = 1;
      for (const auto& a : f.args) n += ast_size(a);
      return n;
    }
  }
  return 0;
}

std::size_t ast_size(const ProbExpr& p) {
  if (p.kind == ProbExpr::Kind::Constant) return 2;
  return 3 + ast_size(p.feature);
}

std::size_t ast_size(const Guard& g) {
  if (g.kind == Guard::Kind::Flip) return 1 + ast_size(g.prob);
  return 1 + ast_size(g.children[0]) + ast_size(g.children[1]);
}

std::size_t ast_size(const Policy& pi) {
  std::size_t n = 0;
  for (const auto& r : pi.rules) n += 1 + ast_size(r.guard);
  return n;
}

}  // namespace plunder
