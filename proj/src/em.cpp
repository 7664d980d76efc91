#include "plunder/em.hpp"

#include <chrono>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "plunder/log.hpp"

namespace plunder {

void EmConfig::validate() const {
  if (max_iters < 1) throw Error("max_iters must be at least 1");
  if (particles < 2) throw Error("particles must be at least 2");
  if (samples < 1 || samples > particles) throw Error("samples must be in [1, particles]");
  if (synth.lambda < 0) throw Error("lambda must be non-negative");
  if (!(gamma_gain >= 0)) throw Error("gamma_gain must be non-negative");
}

nlohmann::json EmIteration::to_json() const {
  nlohmann::json j{{"iteration", iteration},
                   {"policy", policy},
                   {"ast_size", ast_size},
                   {"log_likelihood", log_likelihood},
                   {"wall_seconds", wall_seconds}};
  j["train_accuracy"] = train_accuracy ? nlohmann::json(*train_accuracy) : nlohmann::json(nullptr);
  return j;
}

std::string EmResult::trace_jsonl() const {
  std::string out;
  for (const auto& it : trace) out += it.to_json().dump() + "\n";
  nlohmann::json summary{{"summary", true},
                         {"gamma", gamma},
                         {"converged", converged},
                         {"iterations", iterations},
                         {"returned_iteration", returned_iteration}};
  return out + summary.dump() + "\n";
}

Policy default_initial_policy(const Domain& domain) {
  Policy pi;
  const std::size_t na = domain.actions.size();
  for (ActionId a = 0; a < na; ++a)
    for (ActionId b = 0; b < na; ++b)
      if (a != b) pi.rules.push_back({a, Guard::flip(ProbExpr::constant(0.1)), b});
  return pi;
}

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& f) {
  const std::size_t workers = std::min<std::size_t>(std::max(1u, threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<FilterResult> filter_all(std::span<const Trajectory> demos, const ObservationModel& model,
                                     const Policy& pi, const Domain& domain, std::size_t particles,
                                     std::uint64_t seed, unsigned threads) {
  std::vector<FilterResult> out(demos.size());
  parallel_for(demos.size(), threads, [&](std::size_t d) {
    Rng rng(derive_seed(seed, d));
    out[d] = run_filter(demos[d], model, pi, domain, particles, rng);
  });
  return out;
}

double mean_log_marginal(std::span<const FilterResult> results) {
  double total = 0.0;
  std::size_t steps = 0;
  for (const auto& fr : results) {
    total += fr.log_marginal;
    steps += fr.steps();
  }
  if (steps == 0) throw Error("likelihood of an empty demonstration set");
  return total / static_cast<double>(steps);
}

double likelihood(std::span<const Trajectory> demos, const ObservationModel& model, const Policy& pi,
                  const Domain& domain, std::size_t particles, std::uint64_t seed, unsigned threads) {
  const auto results = filter_all(demos, model, pi, domain, particles, seed, threads);
  return mean_log_marginal(results);
}

namespace {
enum Phase : std::uint64_t { kFilterPhase = 1, kTracebackPhase = 2, kSynthPhase = 3 };
}  // namespace

double default_gamma(std::span<const Trajectory> demos, const ObservationModel& model, const Domain& domain,
                     const EmConfig& cfg) {
  const double base = likelihood(demos, model, default_initial_policy(domain), domain, cfg.particles,
                                 derive_seed(cfg.seed, 0, kFilterPhase), cfg.threads);
  return base + cfg.gamma_gain;
}

namespace {

std::optional<double> map_accuracy(std::span<const Trajectory> demos, std::span<const FilterResult> results) {
  std::size_t hits = 0, total = 0;
  for (std::size_t d = 0; d < demos.size(); ++d) {
    if (demos[d].gt_actions.size() != demos[d].size()) return std::nullopt;
    const auto seq = map_lineage(results[d]);
    for (std::size_t t = 0; t < seq.size(); ++t) hits += seq[t] == demos[d].gt_actions[t];
    total += seq.size();
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

EmResult run_plunder(std::span<const Trajectory> demos, const ObservationModel& model, const Policy& initial,
                 const Domain& domain, const EmConfig& cfg) {
  cfg.validate();
  check_policy(initial, domain);
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();

  EmResult res;
  res.gamma = std::isnan(cfg.gamma) ? default_gamma(demos, model, domain, cfg) : cfg.gamma;
  log().info("convergence threshold {:.4f} nats/step", res.gamma);

  Policy pi = initial;
  Policy best = initial;
  double best_ll = -std::numeric_limits<double>::infinity();
  int best_iter = 0;
  double current_ll = 0.0;

  for (int k = 0;; ++k) {
    const auto results = filter_all(demos, model, pi, domain, cfg.particles,
                                    derive_seed(cfg.seed, static_cast<std::uint64_t>(k), kFilterPhase),
                                    cfg.threads);
    current_ll = mean_log_marginal(results);
    EmIteration it;
    it.iteration = k;
    it.policy = serialize_policy(pi, domain);
    it.ast_size = ast_size(pi);
    it.log_likelihood = current_ll;
    it.train_accuracy = map_accuracy(demos, results);
    it.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    res.trace.push_back(it);
    log().info("iteration {}: log-likelihood {:.4f}, size {}", k, current_ll, it.ast_size);

    if (current_ll > best_ll) {
      best_ll = current_ll;
      best = pi;
      best_iter = k;
    }
    if (current_ll > res.gamma) {
      res.converged = true;
      break;
    }
    if (k == cfg.max_iters) break;

    // E-step.
    std::vector<std::vector<std::vector<ActionId>>> sequences(demos.size());
    const std::uint64_t trace_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(k), kTracebackPhase);
    for (std::size_t d = 0; d < demos.size(); ++d) {
      Rng rng(derive_seed(trace_seed, d));
      sequences[d] = traceback_samples(results[d], cfg.samples, rng);
    }
    // M-step.
    Rng synth_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(k), kSynthPhase));
    pi = synthesize(pi, demos, sequences, domain, cfg.synth, synth_rng);
    res.iterations = k + 1;
  }

  res.returned_iteration = static_cast<int>(res.trace.size()) - 1;
  res.policy = pi;
  if (!res.converged && best_ll > current_ll + cfg.keep_best_tolerance) {
    res.policy = best;
    res.returned_iteration = best_iter;
  }
  return res;
}

}  // namespace plunder
