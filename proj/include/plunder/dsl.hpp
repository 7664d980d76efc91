#pragma once

// Probabilistic policy language: AST, domains, dimension checking and the
// exact / sampling semantics of action-selection policies.

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "plunder/dimension.hpp"
#include "plunder/random.hpp"

namespace plunder {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when two operands of incompatible dimension meet.
class DimensionError : public Error {
 public:
  DimensionError(const std::string& subtree, Dimension lhs, Dimension rhs);
  Dimension lhs;
  Dimension rhs;
};

/// Unknown variable / function, wrong arity and similar evaluation failures.
class EvalError : public Error {
 public:
  using Error::Error;
};

using ActionId = std::size_t;

/// Values aligned with a Signature.
using State = Eigen::VectorXd;

class ActionSet {
 public:
  ActionSet() = default;
  explicit ActionSet(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  const std::string& name(ActionId a) const { return names_.at(a); }
  const std::vector<std::string>& names() const { return names_; }
  std::optional<ActionId> find(std::string_view name) const;
  ActionId at(std::string_view name) const;

 private:
  std::vector<std::string> names_;
};

struct Variable {
  std::string name;
  Dimension dim;
  /// Hidden simulator bookkeeping (clock, traffic phases) is not offered to the synthesizer.
  bool searchable = true;
};

class Signature {
 public:
  Signature() = default;
  explicit Signature(std::vector<Variable> vars);

  std::size_t size() const { return vars_.size(); }
  const Variable& operator[](std::size_t i) const { return vars_[i]; }
  const std::vector<Variable>& variables() const { return vars_; }
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

 private:
  std::vector<Variable> vars_;
};

struct Function {
  enum class DimRule {
    Fixed,     // declared parameter dimensions and result dimension
    Uniform,   // all arguments share one dimension, which is also the result (+, -)
    Product,   // binary, exponents add
    Quotient,  // binary, exponents subtract
  };

  std::string name;
  std::size_t arity = 0;
  DimRule rule = DimRule::Fixed;
  std::vector<Dimension> params;  // Fixed only
  Dimension result;               // Fixed only
  std::function<double(std::span<const double>)> apply;
  bool searchable = true;
};

class FunctionRegistry {
 public:
  /// Registry holding "+", "-", "mul" and "div".
  static FunctionRegistry with_builtins();

  void add(Function f);
  const Function* find(std::string_view name) const;
  const std::vector<Function>& all() const { return functions_; }

 private:
  std::vector<Function> functions_;
};

/// Everything a policy is defined over: variables, actions and callable functions.
struct Domain {
  std::string name;
  Signature signature;
  ActionSet actions;
  FunctionRegistry functions;
};

struct Feature {
  enum class Kind { Var, Const, Apply };

  Kind kind = Kind::Const;
  std::string name;  // variable or function name
  double value = 0.0;
  std::optional<Dimension> unit;  // Const: nullopt adopts the dimension its context requires
  std::vector<Feature> args;

  static Feature var(std::string name);
  static Feature constant(double value, std::optional<Dimension> unit = std::nullopt);
  static Feature apply(std::string function, std::vector<Feature> args);

  friend bool operator==(const Feature&, const Feature&) = default;
};

Feature operator+(Feature a, Feature b);
Feature operator-(Feature a, Feature b);

struct ProbExpr {
  enum class Kind { Constant, Logistic };

  Kind kind = Kind::Constant;
  double r = 0.0;
  Feature feature;
  double x0 = 0.0;
  double k = 0.0;

  static ProbExpr constant(double r);
  static ProbExpr logistic(Feature f, double x0, double k);

  friend bool operator==(const ProbExpr&, const ProbExpr&) = default;
};

struct Guard {
  enum class Kind { Flip, And, Or };

  Kind kind = Kind::Flip;
  ProbExpr prob;                // Flip
  std::vector<Guard> children;  // And / Or: exactly two

  static Guard flip(ProbExpr p);
  static Guard conj(Guard a, Guard b);
  static Guard disj(Guard a, Guard b);

  bool is_leaf() const { return kind == Kind::Flip; }
  friend bool operator==(const Guard&, const Guard&) = default;
};

struct Rule {
  ActionId from = 0;
  Guard guard;
  ActionId to = 0;
  friend bool operator==(const Rule&, const Rule&) = default;
};

/// Ordered guarded transitions. The first rule (for the current action) whose
/// guard comes up true fires; if none does, the action is kept.
struct Policy {
  std::vector<Rule> rules;
  friend bool operator==(const Policy&, const Policy&) = default;
};

// --- dimensions -----------------------------------------------------------

/// Unique dimension of `f` under `domain`, or throws DimensionError / EvalError.
Dimension check_dimensions(const Feature& f, const Domain& domain);

/// Checks every feature, action reference and constant probability of `policy`.
void check_policy(const Policy& policy, const Domain& domain);

// --- semantics ------------------------------------------------------------

double eval_feature(const Feature& f, const State& s, const Domain& domain);

double logistic(double u);

/// Probability carried by a ProbExpr. Non-finite feature values saturate.
double prob_expr_value(const ProbExpr& p, const State& s, const Domain& domain);

/// Probability that the guard is true, with independent coin flips at the leaves.
double guard_probability(const Guard& g, const State& s, const Domain& domain);

/// Next-action distribution indexed by ActionId; sums to one.
Eigen::VectorXd transition_distribution(const Policy& pi, ActionId prev, const State& s,
                                        const Domain& domain);

/// Samples by flipping each applicable rule's guard in order.
ActionId sample_next_action(const Policy& pi, ActionId prev, const State& s, const Domain& domain,
                            Rng& rng);

// --- size -----------------------------------------------------------------

std::size_t ast_size(const Feature& f);
std::size_t ast_size(const ProbExpr& p);
std::size_t ast_size(const Guard& g);
std::size_t ast_size(const Policy& pi);

// --- text -----------------------------------------------------------------

class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t line, std::size_t column);
  std::size_t line;
  std::size_t column;
};

std::string format_number(double v);
std::string to_string(const Feature& f);
std::string to_string(const ProbExpr& p);
std::string to_string(const Guard& g);
std::string to_string(const Rule& r, const Domain& domain);

/// One rule per line, newline terminated.
std::string serialize_policy(const Policy& pi, const Domain& domain);

/// Parses and dimension-checks a policy against `domain`.
Policy parse_policy(std::string_view text, const Domain& domain);

/// Parses a standalone feature expression (no dimension check).
Feature parse_feature(std::string_view text);

}  // namespace plunder
