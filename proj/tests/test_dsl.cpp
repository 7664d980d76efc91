#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "doctest.h"
#include "plunder/em.hpp"
#include "plunder/env.hpp"
#include "support.hpp"

using namespace plunder;

namespace {

State ss_state(double v, double vmax, double dstop, double amin = -20.0) {
  State s(6);
  s << 0.0, v, dstop, vmax, amin, 13.0;
  return s;
}

Guard random_guard(Rng& rng, int depth) {
  const std::vector<std::string> features = {"x", "y", "x - y", "y + x"};
  if (depth == 0 || uniform01(rng) < 0.4) {
    if (uniform01(rng) < 0.3) return Guard::flip(ProbExpr::constant(uniform01(rng)));
    const auto f = parse_feature(features[static_cast<std::size_t>(uniform01(rng) * features.size())]);
    return Guard::flip(ProbExpr::logistic(f, uniform(rng, -2, 2), uniform(rng, -30, 30)));
  }
  Guard a = random_guard(rng, depth - 1), b = random_guard(rng, depth - 1);
  return uniform01(rng) < 0.5 ? Guard::conj(a, b) : Guard::disj(a, b);
}

Policy random_policy(Rng& rng, const Domain& d) {
  Policy pi;
  const std::size_t na = d.actions.size();
  const auto n = static_cast<std::size_t>(uniform01(rng) * 7);
  for (std::size_t i = 0; i < n; ++i) {
    const auto from = static_cast<ActionId>(uniform01(rng) * na);
    auto to = static_cast<ActionId>(uniform01(rng) * (na - 1));
    if (to >= from) ++to;
    pi.rules.push_back({from, random_guard(rng, 2), to});
  }
  return pi;
}

State random_state(Rng& rng) {
  State s(2);
  s << uniform(rng, -3, 3), uniform(rng, -3, 3);
  return s;
}

}  // namespace

TEST_CASE("feature evaluation") {
  const StopSign ss;
  const Domain& d = ss.domain();
  CHECK(eval_feature(Feature::var("v") - Feature::constant(10, dim::velocity), ss_state(9.6, 10, 50), d) ==
        doctest::Approx(-0.4));
  // braking distance v^2 / (2 |a|)
  CHECK(eval_feature(parse_feature("distTrv(v, amin)"), ss_state(10, 15, 50), d) == doctest::Approx(2.5));
  CHECK(eval_feature(Feature::constant(3, dim::none), ss_state(1, 2, 3), d) == 3.0);
  CHECK_THROWS_AS(eval_feature(Feature::var("speed"), ss_state(1, 2, 3), d), Error);
  CHECK_THROWS_AS(eval_feature(parse_feature("nosuch(v)"), ss_state(1, 2, 3), d), Error);
}

TEST_CASE("dimension checking") {
  const StopSign ss;
  const Domain& d = ss.domain();
  CHECK(check_dimensions(parse_feature("v - vmax"), d) == dim::velocity);
  CHECK(check_dimensions(parse_feature("distTrv(v, amin) - dstop"), d) == dim::length);
  CHECK(check_dimensions(parse_feature("timeToStp(v, amin)"), d) == dim::time);
  try {
    check_dimensions(parse_feature("v - dstop"), d);
    FAIL("mixed-dimension difference accepted");
  } catch (const DimensionError& e) {
    CHECK(((e.lhs == dim::velocity && e.rhs == dim::length) || (e.lhs == dim::length && e.rhs == dim::velocity)));
  }
  CHECK_THROWS_AS(check_dimensions(parse_feature("distTrv(dstop, amin)"), d), DimensionError);
}

TEST_CASE("dimension checking rejects exactly the inconsistent trees") {
  const StopSign ss;
  const Domain& d = ss.domain();
  struct Leaf {
    const char* name;
    Dimension dim;
  };
  const std::vector<Leaf> leaves = {{"v", dim::velocity}, {"vmax", dim::velocity}, {"dstop", dim::length},
                                    {"pos", dim::length}, {"amin", dim::acceleration}};
  Rng rng(17);
  // Builds a random tree and, independently, its expected dimension (nullopt when invalid).
  std::function<std::pair<Feature, std::optional<Dimension>>(int)> build = [&](int depth) {
    const double u = uniform01(rng);
    if (depth == 0 || u < 0.3) {
      const Leaf& l = leaves[static_cast<std::size_t>(uniform01(rng) * leaves.size())];
      return std::pair{Feature::var(l.name), std::optional<Dimension>(l.dim)};
    }
    auto [a, da] = build(depth - 1);
    auto [b, db] = build(depth - 1);
    std::optional<Dimension> out;
    const bool both = da && db;
    if (u < 0.55) {
      if (both && *da == *db) out = *da;
      return std::pair{a + b, out};
    }
    if (u < 0.8) {
      if (both && *da == *db) out = *da;
      return std::pair{a - b, out};
    }
    if (both && *da == dim::velocity && *db == dim::acceleration) out = dim::length;
    return std::pair{Feature::apply("distTrv", {a, b}), out};
  };
  int valid = 0, invalid = 0;
  for (int i = 0; i < 2000; ++i) {
    auto [f, expected] = build(3);
    if (expected) {
      ++valid;
      CHECK(check_dimensions(f, d) == *expected);
    } else {
      ++invalid;
      CHECK_THROWS_AS(check_dimensions(f, d), DimensionError);
    }
  }
  CHECK(valid > 100);
  CHECK(invalid > 100);
}

TEST_CASE("probability expressions") {
  const StopSign ss;
  const Domain& d = ss.domain();
  const State s = ss_state(9.6, 10, 50);
  CHECK(prob_expr_value(ProbExpr::constant(0.1), s, d) == 0.1);
  CHECK(prob_expr_value(ProbExpr::logistic(parse_feature("v - vmax"), -0.4, 1.3), s, d) == doctest::Approx(0.5));
  CHECK(prob_expr_value(ProbExpr::logistic(parse_feature("v"), 9.6, -7), s, d) == doctest::Approx(0.5));
  // Braking distance with amin = 0 is infinite; the logistic saturates instead of failing.
  const State still = ss_state(5, 10, 50, 0.0);
  CHECK(prob_expr_value(ProbExpr::logistic(parse_feature("distTrv(v, amin)"), 0, 1), still, d) == 1.0);
  CHECK(prob_expr_value(ProbExpr::logistic(parse_feature("distTrv(v, amin)"), 0, -1), still, d) == 0.0);
}

TEST_CASE("logistic shape") {
  CHECK(logistic(0.0) == 0.5);
  const StopSign ss;
  const Domain& d = ss.domain();
  for (double k : {-3.0, -0.2, 0.4, 5.0}) {
    const ProbExpr p = ProbExpr::logistic(parse_feature("v"), 4.0, k);
    CHECK(prob_expr_value(p, ss_state(4.0, 10, 50), d) == doctest::Approx(0.5));
    double last = prob_expr_value(p, ss_state(0.0, 10, 50), d);
    for (double v = 0.25; v <= 8.0; v += 0.25) {
      const double cur = prob_expr_value(p, ss_state(v, 10, 50), d);
      if (k > 0) CHECK(cur > last);
      else CHECK(cur < last);
      last = cur;
    }
  }
}

TEST_CASE("guard composition") {
  const Domain d = test::toy_domain();
  const State s = State::Zero(2);
  auto flip = [](double r) { return Guard::flip(ProbExpr::constant(r)); };
  CHECK(guard_probability(Guard::conj(flip(0.4), flip(0.5)), s, d) == doctest::Approx(0.2));
  CHECK(guard_probability(Guard::disj(flip(0.4), flip(0.5)), s, d) == doctest::Approx(0.7));
  CHECK(guard_probability(flip(1.0), s, d) == 1.0);
}

TEST_CASE("guard probability is monotone in every leaf") {
  const Domain d = test::toy_domain();
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    // Three constant leaves in a random And/Or shape.
    std::vector<double> r = {uniform01(rng), uniform01(rng), uniform01(rng)};
    const int shape = static_cast<int>(uniform01(rng) * 4);
    auto build = [&](const std::vector<double>& p) {
      auto f = [&](int i) { return Guard::flip(ProbExpr::constant(p[static_cast<std::size_t>(i)])); };
      switch (shape) {
        case 0: return Guard::conj(f(0), Guard::disj(f(1), f(2)));
        case 1: return Guard::disj(f(0), Guard::conj(f(1), f(2)));
        case 2: return Guard::conj(Guard::conj(f(0), f(1)), f(2));
        default: return Guard::disj(Guard::disj(f(0), f(1)), f(2));
      }
    };
    const double base = guard_probability(build(r), State::Zero(2), d);
    for (std::size_t leaf = 0; leaf < 3; ++leaf) {
      auto bumped = r;
      bumped[leaf] = uniform(rng, r[leaf], 1.0);
      CHECK(guard_probability(build(bumped), State::Zero(2), d) >= base - 1e-15);
    }
  }
}

TEST_CASE("transition distribution") {
  const StopSign ss;
  const Domain& d = ss.domain();
  const State s = ss_state(9.6, 10, 50);
  const auto one = parse_policy("if (flp(0.5) and a == ACC) then CON", d);
  const Eigen::VectorXd p1 = transition_distribution(one, 0, s, d);
  CHECK(p1[0] == doctest::Approx(0.5));
  CHECK(p1[1] == doctest::Approx(0.5));
  CHECK(p1[2] == 0.0);

  const auto two = parse_policy("if (flp(0.5) and a == ACC) then CON\nif (flp(0.5) and a == ACC) then DEC", d);
  const Eigen::VectorXd p2 = transition_distribution(two, 0, s, d);
  CHECK(p2[0] == doctest::Approx(0.25));
  CHECK(p2[1] == doctest::Approx(0.5));
  CHECK(p2[2] == doctest::Approx(0.25));

  // The hand-written stop-sign guard puts v - vmax = -0.4 at its midpoint.
  const auto learned = parse_policy("if (flp(lgs(v - vmax, -0.4, 1.3)) and a == ACC) then CON", d);
  CHECK(transition_distribution(learned, 0, s, d)[1] == doctest::Approx(0.5));

  // Rules for other actions are ignored.
  CHECK(transition_distribution(two, 1, s, d)[1] == 1.0);
}

TEST_CASE("initial policy transition mass") {
  const StopSign ss;
  const Domain& d = ss.domain();
  const Policy pi0 = default_initial_policy(d);
  CHECK(pi0.rules.size() == 6);
  for (ActionId a = 0; a < 3; ++a) {
    const Eigen::VectorXd p = transition_distribution(pi0, a, ss_state(3, 12, 60), d);
    CHECK(p[static_cast<Eigen::Index>(a)] == doctest::Approx(0.81));
    std::vector<double> others;
    for (ActionId b = 0; b < 3; ++b)
      if (b != a) others.push_back(p[static_cast<Eigen::Index>(b)]);
    CHECK(others[0] == doctest::Approx(0.1));
    CHECK(others[1] == doctest::Approx(0.09));
  }
}

TEST_CASE("transition distributions sum to one") {
  const Domain d = test::toy_domain(3);
  Rng rng(11);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Policy pi = random_policy(rng, d);
    const State s = random_state(rng);
    const auto prev = static_cast<ActionId>(uniform01(rng) * 3);
    const Eigen::VectorXd p = transition_distribution(pi, prev, s, d);
    CHECK((p.array() >= 0.0).all());
    CHECK((p.array() <= 1.0).all());
    worst = std::max(worst, std::abs(p.sum() - 1.0));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("sampling follows the exact distribution") {
  const Domain d = test::toy_domain(3);
  Rng seed_rng(3);
  const State s = random_state(seed_rng);
  auto flip = [](double r) { return Guard::flip(ProbExpr::constant(r)); };

  SUBCASE("no rule fires") {
    const Policy pi{{{0, flip(0.0), 1}, {0, flip(0.0), 2}}};
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) CHECK(sample_next_action(pi, 0, s, d, rng) == 0);
  }
  SUBCASE("a certain rule always fires") {
    const Policy pi{{{1, flip(1.0), 2}}};
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) CHECK(sample_next_action(pi, 1, s, d, rng) == 2);
  }
  SUBCASE("frequencies within three binomial standard errors") {
    Rng gen(23);
    const int draws = 100000;
    for (int trial = 0; trial < 8; ++trial) {
      const Policy pi = random_policy(gen, d);
      const State st = random_state(gen);
      const auto prev = static_cast<ActionId>(uniform01(gen) * 3);
      const Eigen::VectorXd p = transition_distribution(pi, prev, st, d);
      std::vector<int> counts(3, 0);
      Rng rng(derive_seed(99, static_cast<std::uint64_t>(trial)));
      for (int i = 0; i < draws; ++i) ++counts[sample_next_action(pi, prev, st, d, rng)];
      for (Eigen::Index a = 0; a < 3; ++a) {
        const double freq = counts[static_cast<std::size_t>(a)] / static_cast<double>(draws);
        const double se = std::sqrt(p[a] * (1 - p[a]) / draws);
        CHECK(std::abs(freq - p[a]) <= 3 * se + 1e-12);
      }
    }
  }
}

TEST_CASE("ast size") {
  const StopSign ss;
  const Domain& d = ss.domain();
  CHECK(ast_size(Policy{}) == 0);
  CHECK(ast_size(parse_policy("if (flp(0.1) and a == ACC) then CON", d)) == 4);
  CHECK(ast_size(default_initial_policy(d)) == 24);
  // rule + flip + lgs + x0 + k + (-, v, vmax)
  CHECK(ast_size(parse_policy("if (flp(lgs(v - vmax, -0.4, 1.3)) and a == ACC) then CON", d)) == 8);
}

TEST_CASE("policy text round trip") {
  const StopSign ss;
  const Domain& d = ss.domain();
  const std::vector<std::string> corpus = {
      "if (flp(0.1) and a == ACC) then CON\n",
      "if (flp(lgs(v - vmax, -0.4, 1.3)) and a == ACC) then CON\n",
      "if (flp(lgs(distTrv(v, amin) - dstop, 2.8, 0.8)) and a == CON) then DEC\n",
      "if (flp(lgs(dstop, 1.6, -0.09)) && flp(0.25) || flp(lgs(v, 3, 1)) and a == DEC) then ACC\n",
      "if (flp(0.5) && (flp(0.25) || flp(0.125)) and a == CON) then ACC\n",
      "if (flp(0.5) || (flp(0.25) || flp(0.125)) and a == CON) then ACC\n",
      "if (flp(lgs(v - (vmax - v), 0, 1)) and a == ACC) then DEC\n",
      "if (flp(lgs(v + vmax - v, 0, 1)) and a == ACC) then DEC\n",
      "if (flp(lgs(timeToStp(v, amin), 1e-07, 0.30000000000000004)) and a == ACC) then DEC\n",
      "if (flp(lgs(pos + dstop, 70, -2)) and a == DEC) then CON\n",
  };
  std::string all;
  for (const auto& text : corpus) {
    const Policy pi = parse_policy(text, d);
    CHECK(serialize_policy(pi, d) == text);
    CHECK(parse_policy(serialize_policy(pi, d), d) == pi);
    all += text;
  }
  CHECK(serialize_policy(parse_policy(all, d), d) == all);

  // Whitespace is not significant.
  const Policy spaced = parse_policy("  if(flp( 0.1 )and a==ACC)then CON  \n\n", d);
  CHECK(serialize_policy(spaced, d) == corpus[0]);

  // Random numeric parameters survive at full precision.
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const double x0 = uniform(rng, -1e3, 1e3), k = uniform(rng, -50, 50);
    Policy pi{{{0, Guard::flip(ProbExpr::logistic(parse_feature("v"), x0, k)), 2}}};
    const Policy back = parse_policy(serialize_policy(pi, d), d);
    CHECK(back.rules[0].guard.prob.x0 == x0);
    CHECK(back.rules[0].guard.prob.k == k);
  }
}

TEST_CASE("policy text errors") {
  const StopSign ss;
  const Domain& d = ss.domain();
  try {
    parse_policy("if (flp(0.1) and a == ACC) then CON\nif (flp(0.1) and a = ACC) then DEC", d);
    FAIL("syntax error accepted");
  } catch (const ParseError& e) {
    CHECK(e.line == 2);
    CHECK(e.column > 1);
  }
  CHECK_THROWS_AS(parse_policy("if (flp(0.1) and a == FLY) then CON", d), Error);
  CHECK_THROWS_AS(parse_policy("if (flp(lgs(v - dstop, 0, 1)) and a == ACC) then CON", d), DimensionError);
  CHECK_THROWS_AS(parse_policy("if (flp(1.5) and a == ACC) then CON", d), Error);
}
