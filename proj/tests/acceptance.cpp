// End-to-end acceptance run. Prints a detail log, then one PASS/FAIL line per
// criterion. Exits 0 once the report is complete; pass --strict to turn any
// FAIL into a non-zero exit code.

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "plunder/cli.hpp"
#include "plunder/demo_io.hpp"
#include "plunder/filter.hpp"
#include "plunder/synth.hpp"
#include "support.hpp"

using namespace plunder;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  int id;
  std::string title;
  bool pass;
  std::string detail;
};

std::vector<Verdict> verdicts;

void record(int id, std::string title, bool pass, std::string detail) {
  std::printf("  -> criterion %d %s: %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  verdicts.push_back({id, std::move(title), pass, std::move(detail)});
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1e", v);
  return buf;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void collect_features(const Guard& g, std::vector<std::string>& out) {
  if (g.is_leaf()) {
    if (g.prob.kind == ProbExpr::Kind::Logistic) out.push_back(to_string(g.prob.feature));
    return;
  }
  for (const Guard& c : g.children) collect_features(c, out);
}

std::vector<std::string> rule_features(const Policy& pi, ActionId from, ActionId to) {
  std::vector<std::string> out;
  for (const Rule& r : pi.rules)
    if (r.from == from && r.to == to) collect_features(r.guard, out);
  return out;
}

// --- criteria 1-4: stop-sign, three seeds ------------------------------------

struct SeedRun {
  std::uint64_t seed;
  std::map<std::string, double> accuracy, success;
  double gt_success = 0.0;
  bool converged = false;
  int iterations = 0;
  double plunder_seconds = 0.0;
};

std::vector<SeedRun> stop_sign_runs() {
  const auto env = make_environment("ss");
  std::vector<SeedRun> runs;
  for (std::uint64_t seed : {1, 2, 3}) {
    ExperimentConfig cfg;
    cfg.env = "ss";
    cfg.seed = seed;
    const DemoPair demos = make_demos(*env, cfg, cfg.sigma_mult);
    SeedRun run{seed, {}, {}};
    MetricsReport rep;
    for (const std::string method : {"plunder", "greedy", "oneshot"}) {
      const TrainOutcome out = train_method(method, *env, demos.train, cfg);
      if (out.em) {
        run.converged = out.em->converged;
        run.iterations = out.em->iterations;
        run.plunder_seconds = out.seconds;
      }
      evaluate_policy(rep, method, "ss", out.policy, *env, demos.test, cfg);
      run.accuracy[method] = rep.get(method, "ss", "accuracy").value;
      run.success[method] = rep.get(method, "ss", "success_rate").value;
      std::printf("  ss seed %llu %-8s acc %.3f  success %.2f  size %zu  %.1fs\n",
                  static_cast<unsigned long long>(seed), method.c_str(), run.accuracy[method], run.success[method],
                  ast_size(out.policy), out.seconds);
      std::fflush(stdout);
    }
    evaluate_policy(rep, "gt", "ss", env->gt_policy(), *env, demos.test, cfg);
    run.gt_success = rep.get("gt", "ss", "success_rate").value;
    std::printf("  ss seed %llu gt       acc %.3f  success %.2f  (plunder: %s after %d iterations)\n",
                static_cast<unsigned long long>(seed), rep.get("gt", "ss", "accuracy").value, run.gt_success,
                run.converged ? "converged" : "not converged", run.iterations);
    runs.push_back(run);
  }
  return runs;
}

// --- criterion 5: merge noise sweep -------------------------------------------

struct SweepResult {
  std::vector<double> levels;
  std::map<std::string, std::vector<double>> loglik;
  bool default_converged = false;
  int default_iterations = 0;
};

SweepResult merge_sweep() {
  const auto env = make_environment("mg");
  ExperimentConfig cfg;
  cfg.env = "mg";
  cfg.seed = 1;
  SweepResult res;
  res.levels = {0.0, 0.5, 1.0, 2.0, 4.0};
  for (double level : res.levels) {
    const DemoPair demos = make_demos(*env, cfg, level);
    const std::string task = task_label("mg", level);
    MetricsReport rep;
    for (const std::string method : {"plunder", "greedy", "oneshot"}) {
      const TrainOutcome out = train_method(method, *env, demos.train, cfg);
      if (out.em && level == 1.0) {
        res.default_converged = out.em->converged;
        res.default_iterations = out.em->iterations;
      }
      evaluate_policy(rep, method, task, out.policy, *env, demos.test, cfg);
      res.loglik[method].push_back(rep.get(method, task, "log_likelihood").value);
    }
    evaluate_policy(rep, "gt", task, env->gt_policy(), *env, demos.test, cfg);
    res.loglik["gt"].push_back(rep.get("gt", task, "log_likelihood").value);
    std::printf("  mg noise x%-4s plunder %.5f  greedy %.5f  oneshot %.5f  gt %.5f\n", format_number(level).c_str(),
                res.loglik["plunder"].back(), res.loglik["greedy"].back(), res.loglik["oneshot"].back(),
                res.loglik["gt"].back());
    std::fflush(stdout);
  }
  return res;
}

// --- criterion 6: inference oracle --------------------------------------------

void inference_oracle() {
  const Domain d = test::toy_domain();
  const Policy pi = test::toy_policy(d);
  const ObservationModel model = test::toy_model(0.8);
  const Trajectory traj = test::toy_trajectory(5, 42);
  const ExactPosterior ex = exact_posterior(traj, model, pi, d);

  // Brute force over all 2^5 label sequences.
  const auto joint = test::enumerate_joint(traj, model, pi, d);
  double m = -1e300;
  for (const auto& [seq, lp] : joint) m = std::max(m, lp);
  double z = 0.0;
  for (const auto& [seq, lp] : joint) z += std::exp(lp - m);
  const double log_z = m + std::log(z);
  Eigen::MatrixXd brute = Eigen::MatrixXd::Zero(5, 2);
  for (const auto& [seq, lp] : joint)
    for (std::size_t t = 0; t < 5; ++t)
      brute(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(seq[t])) += std::exp(lp - log_z);
  const double fb_err = std::max(std::abs(ex.log_marginal - log_z), (ex.smoothed - brute).cwiseAbs().maxCoeff());

  Eigen::MatrixXd marg = Eigen::MatrixXd::Zero(5, 2);
  double lm = 0.0;
  for (std::uint64_t r = 0; r < 30; ++r) {
    Rng rng(derive_seed(2024, r));
    const FilterResult fr = run_filter(traj, model, pi, d, 10000, rng);
    marg += lineage_marginals(fr, 2) / 30.0;
    lm += fr.log_marginal / 30.0;
  }
  const double marg_err = (marg - ex.smoothed).cwiseAbs().maxCoeff();
  const double lm_err = std::abs(lm - ex.log_marginal);
  record(6, "inference correctness", marg_err <= 0.05 && lm_err <= 0.1 && fb_err <= 1e-10,
         "marginal error " + fmt(marg_err) + " (<= 0.05), log marginal error " + fmt(lm_err) +
             " (<= 0.1), forward-backward vs enumeration " + sci(fb_err) + " (<= 1e-10)");
}

// --- criterion 7: gradients ---------------------------------------------------

void gradient_check() {
  const Domain d = test::toy_domain();
  Rng rng(2718);
  const std::vector<std::string> features = {"x", "y", "x - y", "x + y"};
  auto leaf = [&] {
    if (uniform01(rng) < 0.25) return Guard::flip(ProbExpr::constant(uniform(rng, 0.1, 0.9)));
    return Guard::flip(ProbExpr::logistic(parse_feature(features[static_cast<std::size_t>(uniform01(rng) * 4)]),
                                          uniform(rng, -1, 1), uniform(rng, -1.5, 1.5)));
  };
  auto join = [&](Guard a, Guard b) { return uniform01(rng) < 0.5 ? Guard::conj(a, b) : Guard::disj(a, b); };
  std::function<bool(const Guard&, const State&)> interior = [&](const Guard& g, const State& s) {
    if (std::abs(guard_probability(g, s, d) - 0.5) >= 0.49) return false;
    return g.is_leaf() || (interior(g.children[0], s) && interior(g.children[1], s));
  };
  int instances = 0;
  double worst = 0.0;
  while (instances < 1000) {
    Guard a = leaf(), b = leaf(), c = leaf();
    const Guard g = uniform01(rng) < 0.5 ? join(join(a, b), c) : join(a, join(b, c));
    std::vector<State> pos, neg;
    bool ok = true;
    for (int i = 0; i < 12 && ok; ++i) {
      State s(2);
      s << uniform(rng, -1, 1), uniform(rng, -1, 1);
      ok = interior(g, s);
      (uniform01(rng) < 0.5 ? pos : neg).push_back(s);
    }
    if (!ok) continue;
    ++instances;
    Eigen::VectorXd grad;
    guard_loglik(g, pos, neg, d, &grad);
    const Eigen::VectorXd theta = guard_parameters(g);
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Eigen::VectorXd up = theta, down = theta;
      up[i] += 1e-5;
      down[i] -= 1e-5;
      const double fd = (guard_loglik(with_parameters(g, up), pos, neg, d) -
                         guard_loglik(with_parameters(g, down), pos, neg, d)) / 2e-5;
      worst = std::max(worst, std::abs(grad[i] - fd) / std::max({std::abs(grad[i]), std::abs(fd), 1e-6}));
    }
  }
  record(7, "gradient correctness", worst <= 1e-4,
         "worst relative error " + sci(worst) + " over 1000 instances (<= 1e-4)");
}

// --- criterion 8: semantics ---------------------------------------------------

void semantics_check() {
  const Domain d = test::toy_domain(3);
  Rng rng(11);
  const std::vector<std::string> features = {"x", "y", "x - y", "y + x"};
  std::function<Guard(int)> guard = [&](int depth) {
    if (depth == 0 || uniform01(rng) < 0.4) {
      if (uniform01(rng) < 0.3) return Guard::flip(ProbExpr::constant(uniform01(rng)));
      return Guard::flip(ProbExpr::logistic(parse_feature(features[static_cast<std::size_t>(uniform01(rng) * 4)]),
                                            uniform(rng, -2, 2), uniform(rng, -30, 30)));
    }
    Guard a = guard(depth - 1), b = guard(depth - 1);
    return uniform01(rng) < 0.5 ? Guard::conj(a, b) : Guard::disj(a, b);
  };
  auto policy = [&] {
    Policy pi;
    const auto n = static_cast<std::size_t>(uniform01(rng) * 7);
    for (std::size_t i = 0; i < n; ++i) {
      const auto from = static_cast<ActionId>(uniform01(rng) * 3);
      auto to = static_cast<ActionId>(uniform01(rng) * 2);
      if (to >= from) ++to;
      pi.rules.push_back({from, guard(2), to});
    }
    return pi;
  };
  auto state = [&] {
    State s(2);
    s << uniform(rng, -3, 3), uniform(rng, -3, 3);
    return s;
  };
  double worst_sum = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Policy pi = policy();
    const Eigen::VectorXd p = transition_distribution(pi, static_cast<ActionId>(uniform01(rng) * 3), state(), d);
    worst_sum = std::max(worst_sum, std::abs(p.sum() - 1.0));
  }
  double worst_z = 0.0;
  for (int trial = 0; trial < 8; ++trial) {
    const Policy pi = policy();
    const State s = state();
    const auto prev = static_cast<ActionId>(uniform01(rng) * 3);
    const Eigen::VectorXd p = transition_distribution(pi, prev, s, d);
    std::vector<int> counts(3, 0);
    Rng draw(derive_seed(99, static_cast<std::uint64_t>(trial)));
    for (int i = 0; i < 100000; ++i) ++counts[sample_next_action(pi, prev, s, d, draw)];
    for (Eigen::Index a = 0; a < 3; ++a) {
      const double se = std::sqrt(p[a] * (1 - p[a]) / 1e5);
      const double dev = std::abs(counts[static_cast<std::size_t>(a)] / 1e5 - p[a]);
      worst_z = std::max(worst_z, se > 0 ? dev / se : (dev > 0 ? 1e9 : 0.0));
    }
  }
  record(8, "semantics properties", worst_sum <= 1e-12 && worst_z <= 3.0,
         "worst |sum - 1| " + sci(worst_sum) + " over 10000 pairs (<= 1e-12), worst deviation " +
             fmt(worst_z, 2) + " sigma at 1e5 draws (<= 3)");
}

// --- criterion 9: structure ---------------------------------------------------

void structure_check() {
  const auto env = make_environment("ss");
  ExperimentConfig cfg;
  cfg.env = "ss";
  cfg.seed = 1;
  cfg.gamma = std::numeric_limits<double>::infinity();
  cfg.max_iters = 5;
  const double level = 1.0 / 3.0;
  const DemoPair demos = make_demos(*env, cfg, level);
  const TrainOutcome out = train_method("plunder", *env, demos.train, cfg);
  const Domain& d = env->domain();
  std::printf("  low-noise policy after %d iterations:\n", out.em->iterations);
  for (const Rule& r : out.policy.rules) std::printf("    %s\n", to_string(r, d).c_str());

  const auto acc_con = rule_features(out.policy, d.actions.at("ACC"), d.actions.at("CON"));
  const auto con_dec = rule_features(out.policy, d.actions.at("CON"), d.actions.at("DEC"));
  const bool speed = std::any_of(acc_con.begin(), acc_con.end(),
                                 [](const std::string& f) { return f == "v - vmax" || f == "vmax - v"; });
  const bool braking = std::any_of(con_dec.begin(), con_dec.end(), [](const std::string& f) {
    const bool has_dist = f.find("distTrv(") != std::string::npos;
    const bool diff = f.rfind("dstop - distTrv(", 0) == 0 || (f.rfind("distTrv(", 0) == 0 && f.ends_with(") - dstop"));
    return has_dist && diff;
  });
  record(9, "structure recovery", speed && braking,
         std::string("ACC->CON ") + (speed ? "uses" : "lacks") + " v - vmax; CON->DEC " +
             (braking ? "uses" : "lacks") + " a distTrv / dstop difference");
}

// --- criterion 10: determinism -------------------------------------------------

void determinism_check() {
  const fs::path dir = fs::temp_directory_path() / "plunder_acceptance_determinism";
  const std::vector<std::string> files = {"policy.txt", "metrics.csv", "metrics.json"};
  auto run = [&] {
    fs::remove_all(dir);
    const std::vector<std::string> common = {"--env", "ss", "--seed", "4", "--out", dir.string(), "--eval-particles",
                                             "4000", "--trials", "50"};
    std::vector<std::string> train = {"train"}, eval = {"eval"};
    train.insert(train.end(), common.begin(), common.end());
    eval.insert(eval.end(), common.begin(), common.end());
    const int tc = run_cli(train);
    const int ec = run_cli(eval);
    std::map<std::string, std::string> out;
    for (const auto& f : files) out[f] = fs::exists(dir / f) ? read_text_file(dir / f) : "";
    return std::pair{tc != kExitConfig && tc != kExitRuntime && ec == kExitOk, out};
  };
  const auto [ok_a, a] = run();
  const auto [ok_b, b] = run();
  fs::remove_all(dir);
  bool same = ok_a && ok_b;
  for (const auto& f : files) same = same && !a.at(f).empty() && a.at(f) == b.at(f);
  record(10, "determinism", same,
         same ? "policy.txt, metrics.csv and metrics.json byte-identical across two runs"
              : "outputs differ or a run failed");
}

}  // namespace

int main(int argc, char** argv) {
  const bool strict = argc > 1 && std::string(argv[1]) == "--strict";
  const auto t0 = std::chrono::steady_clock::now();

  std::printf("stop-sign, seeds 1-3, default noise\n");
  const std::vector<SeedRun> ss = stop_sign_runs();
  double worst = 1.0, mean_p = 0, mean_o = 0, mean_g = 0, mean_success = 0, mean_gt = 0, slowest = 0;
  bool ss_converged = true;
  int max_iters = 0;
  for (const SeedRun& r : ss) {
    worst = std::min(worst, r.accuracy.at("plunder"));
    mean_p += r.accuracy.at("plunder") / 3;
    mean_o += r.accuracy.at("oneshot") / 3;
    mean_g += r.accuracy.at("greedy") / 3;
    mean_success += r.success.at("plunder") / 3;
    mean_gt += r.gt_success / 3;
    ss_converged = ss_converged && r.converged;
    max_iters = std::max(max_iters, r.iterations);
    slowest = std::max(slowest, r.plunder_seconds);
  }
  const double seed1 = ss[0].accuracy.at("plunder");
  record(1, "end-to-end stop-sign accuracy", worst >= 0.85 && seed1 >= 0.90 && slowest <= 600,
         "seed 1 " + fmt(seed1, 3) + " (>= 0.90), worst of 3 seeds " + fmt(worst, 3) + " (>= 0.85), slowest training " +
             fmt(slowest, 1) + "s (<= 600s)");
  const double gap_po = mean_p - mean_o, gap_og = mean_o - mean_g;
  record(2, "baseline ordering", gap_po >= 0.03 && gap_og >= 0.03,
         "mean accuracy plunder " + fmt(mean_p, 3) + " > oneshot " + fmt(mean_o, 3) + " > greedy " + fmt(mean_g, 3) +
             ", gaps " + fmt(100 * gap_po, 1) + " and " + fmt(100 * gap_og, 1) + " points (>= 3)");

  std::printf("merge noise sweep, seed 1\n");
  const SweepResult sweep = merge_sweep();
  const bool conv = ss_converged && max_iters <= 10 && sweep.default_converged && sweep.default_iterations <= 10;
  record(3, "convergence", conv,
         "stop-sign seeds 1-3 " + std::string(ss_converged ? "converged" : "did not all converge") + ", at most " +
             std::to_string(max_iters) + " iterations; merge " +
             (sweep.default_converged ? "converged" : "did not converge") + " in " +
             std::to_string(sweep.default_iterations) + " (<= 10)");
  std::vector<std::string> per_seed;
  for (const SeedRun& r : ss) per_seed.push_back(fmt(r.success.at("plunder"), 2));
  record(4, "success rate", mean_success >= 0.80 && mean_gt >= 0.90,
         "learned stop-sign policies " + fmt(mean_success, 2) + " (>= 0.80; per seed " + join(per_seed, ", ") +
             "), ground truth " + fmt(mean_gt, 2) + " (>= 0.90), means over seeds 1-3");

  bool monotone = true, dominant = true;
  std::vector<std::string> why;
  for (const std::string m : {"plunder", "greedy", "oneshot"}) {
    const auto& v = sweep.loglik.at(m);
    for (std::size_t i = 1; i < v.size(); ++i)
      if (v[i] > v[i - 1]) {
        monotone = false;
        why.push_back(m + " rises at x" + format_number(sweep.levels[i]));
      }
  }
  for (std::size_t i = 0; i < sweep.levels.size(); ++i)
    for (const std::string m : {"greedy", "oneshot"})
      if (sweep.loglik.at("plunder")[i] < sweep.loglik.at(m)[i]) {
        dominant = false;
        why.push_back("plunder trails " + m + " by " +
                      fmt(sweep.loglik.at(m)[i] - sweep.loglik.at("plunder")[i], 5) + " at x" +
                      format_number(sweep.levels[i]));
      }
  record(5, "noise sweep", monotone && dominant,
         std::string("log-likelihood ") + (monotone ? "non-increasing" : "not monotone") + " for every method; plunder " +
             (dominant ? ">= every baseline at every level" : "not dominant") + (why.empty() ? "" : " (" + join(why, "; ") + ")"));

  inference_oracle();
  gradient_check();
  semantics_check();
  std::printf("low-noise stop-sign structure\n");
  structure_check();
  determinism_check();

  std::sort(verdicts.begin(), verdicts.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
  std::printf("\nacceptance summary (%.0fs)\n", seconds_since(t0));
  int failed = 0;
  for (const Verdict& v : verdicts) {
    std::printf("[%s] %2d %s: %s\n", v.pass ? "PASS" : "FAIL", v.id, v.title.c_str(), v.detail.c_str());
    failed += !v.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(verdicts.size()) - failed, verdicts.size());
  return strict && failed > 0 ? 1 : 0;
}
