#include "plunder/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "plunder/demo_io.hpp"
#include "plunder/log.hpp"

namespace plunder {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const char* const kTrainFile = "demos_train.json";
const char* const kTestFile = "demos_test.json";
const char* const kPolicyFile = "policy.txt";
const char* const kTraceFile = "trace.jsonl";
const char* const kMetricsCsv = "metrics.csv";
const char* const kMetricsJson = "metrics.json";
const char* const kConfigFile = "config.json";
const char* const kRolloutFile = "rollouts.json";

// NaN is not representable in JSON; unset numbers are written as null.
json number_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

double read_optional_number(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

std::string policy_file_for(const std::string& method) {
  return method == "plunder" ? kPolicyFile : "policy_" + method + ".txt";
}

}  // namespace

// --- configuration ----------------------------------------------------------

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  using Setter = std::function<void(const json&)>;
  const std::vector<std::pair<std::string, Setter>> fields = {
      {"env", [&](const json& v) { c.env = v.get<std::string>(); }},
      {"train", [&](const json& v) { c.train = v.get<std::size_t>(); }},
      {"test", [&](const json& v) { c.test = v.get<std::size_t>(); }},
      {"horizon", [&](const json& v) { c.horizon = v.get<std::size_t>(); }},
      {"sigma_mult", [&](const json& v) { c.sigma_mult = v.get<double>(); }},
      {"seed", [&](const json& v) { c.seed = v.get<std::uint64_t>(); }},
      {"out", [&](const json& v) { c.out = v.get<std::string>(); }},
      {"gamma", [&](const json& v) { c.gamma = read_optional_number(v); }},
      {"gamma_gain", [&](const json& v) { c.gamma_gain = read_optional_number(v); }},
      {"lambda", [&](const json& v) { c.lambda = read_optional_number(v); }},
      {"particles", [&](const json& v) { c.particles = v.get<std::size_t>(); }},
      {"samples", [&](const json& v) { c.samples = v.get<std::size_t>(); }},
      {"max_iters", [&](const json& v) { c.max_iters = v.get<int>(); }},
      {"threads", [&](const json& v) { c.threads = v.get<unsigned>(); }},
      {"eval_particles", [&](const json& v) { c.eval_particles = v.get<std::size_t>(); }},
      {"trials", [&](const json& v) { c.trials = v.get<std::size_t>(); }},
      {"noise_sweep", [&](const json& v) { c.noise_sweep = v.get<std::vector<double>>(); }},
      {"baseline", [&](const json& v) { c.baseline = v.get<std::string>(); }},
      {"policies", [&](const json& v) { c.policies = v.get<std::vector<std::string>>(); }},
      {"policy_file", [&](const json& v) { c.policy_file = v.get<std::string>(); }},
  };
  for (const auto& [key, value] : j.items()) {
    auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.first == key; });
    if (it == fields.end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
  return c;
}

json ExperimentConfig::to_json() const {
  return {{"env", env},
          {"train", train},
          {"test", test},
          {"horizon", horizon},
          {"sigma_mult", sigma_mult},
          {"seed", seed},
          {"out", out.string()},
          {"gamma", number_or_null(gamma)},
          {"gamma_gain", number_or_null(gamma_gain)},
          {"lambda", number_or_null(lambda)},
          {"particles", particles},
          {"samples", samples},
          {"max_iters", max_iters},
          {"threads", threads},
          {"eval_particles", eval_particles},
          {"trials", trials},
          {"noise_sweep", noise_sweep},
          {"baseline", baseline},
          {"policies", policies},
          {"policy_file", policy_file.string()}};
}

void ExperimentConfig::validate() const {
  const auto names = environment_names();
  if (std::find(names.begin(), names.end(), env) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw ConfigError("unknown env '" + env + "' (valid: " + list + ")");
  }
  if (train == 0 || test == 0) throw ConfigError("train and test counts must be positive");
  if (!(sigma_mult >= 0) || !std::isfinite(sigma_mult)) throw ConfigError("sigma_mult must be a finite value >= 0");
  for (double m : noise_sweep)
    if (!(m >= 0) || !std::isfinite(m)) throw ConfigError("noise sweep levels must be finite and >= 0");
  if (!std::isnan(lambda) && lambda < 0) throw ConfigError("lambda must be non-negative");
  if (!std::isnan(gamma_gain) && gamma_gain < 0) throw ConfigError("gamma_gain must be non-negative");
  if (particles < 2) throw ConfigError("particles must be at least 2");
  if (samples < 1 || samples > particles) throw ConfigError("samples must be in [1, particles]");
  if (max_iters < 1) throw ConfigError("max_iters must be at least 1");
  if (eval_particles < 2) throw ConfigError("eval_particles must be at least 2");
  if (trials < 1) throw ConfigError("trials must be at least 1");
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (!baseline.empty() && baseline != "greedy" && baseline != "oneshot")
    throw ConfigError("baseline must be greedy or oneshot");
  for (const auto& p : policies)
    if (p.find('=') == std::string::npos || p.front() == '=' || p.back() == '=')
      throw ConfigError("policy '" + p + "' is not of the form method=path");
}

std::size_t ExperimentConfig::horizon_for(const Environment& e) const {
  return horizon == 0 ? e.default_horizon() : horizon;
}

EmConfig ExperimentConfig::em_config(const Environment& e) const {
  EmConfig em;
  em.gamma = gamma;
  em.gamma_gain = std::isnan(gamma_gain) ? e.recommended_gamma_gain() : gamma_gain;
  em.max_iters = max_iters;
  em.particles = particles;
  em.samples = samples;
  em.seed = seed;
  em.threads = threads;
  em.synth.lambda = std::isnan(lambda) ? e.recommended_lambda() : lambda;
  return em;
}

// --- pipeline ---------------------------------------------------------------

DemoPair make_demos(const Environment& env, const ExperimentConfig& cfg, double sigma_mult) {
  const Policy gt = env.gt_policy();
  const std::size_t h = cfg.horizon_for(env);
  return {generate_demos(env, gt, cfg.train, h, sigma_mult, derive_seed(cfg.seed, 1), "train"),
          generate_demos(env, gt, cfg.test, h, sigma_mult, derive_seed(cfg.seed, 2), "test")};
}

TrainOutcome train_method(const std::string& method, const Environment& env, const DemoSet& train,
                          const ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const EmConfig em = cfg.em_config(env);
  const ObservationModel model = env.observation_model(train.sigma_mult);
  const Domain& domain = env.domain();
  TrainOutcome out;
  out.method = method;
  if (method == "plunder") {
    out.em = run_plunder(train.demos, model, default_initial_policy(domain), domain, em);
    out.policy = out.em->policy;
  } else if (method == "greedy") {
    out.policy = run_greedy_baseline(train.demos, model, domain, em.synth, cfg.seed);
  } else if (method == "oneshot") {
    out.policy = run_oneshot_baseline(train.demos, model, domain, em);
  } else {
    throw ConfigError("unknown method '" + method + "'");
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

void evaluate_policy(MetricsReport& report, const std::string& method, const std::string& task, const Policy& pi,
                     const Environment& env, const DemoSet& test, const ExperimentConfig& cfg) {
  const ObservationModel model = env.observation_model(test.sigma_mult);
  const FilterMetrics fm =
      filter_metrics(pi, test.demos, model, env.domain(), cfg.eval_particles, derive_seed(cfg.seed, 4), cfg.threads);
  if (fm.accuracy) report.add({method, task, "accuracy", *fm.accuracy, 0.0, cfg.seed});
  report.add({method, task, "log_likelihood", fm.log_likelihood, 0.0, cfg.seed});
  const Rate r = success_rate(pi, env, cfg.trials, cfg.horizon_for(env), test.sigma_mult, derive_seed(cfg.seed, 3));
  report.add({method, task, "success_rate", r.value, r.stderr_, cfg.seed});
  report.add({method, task, "ast_size", static_cast<double>(ast_size(pi)), 0.0, cfg.seed});
}

std::string task_label(const std::string& env, std::optional<double> sigma_mult) {
  return sigma_mult ? env + "@" + format_number(*sigma_mult) : env;
}

// --- commands ---------------------------------------------------------------

namespace {

void echo_config(const ExperimentConfig& cfg, const std::string& command) {
  json j = cfg.to_json();
  j["command"] = command;
  write_text_file(cfg.out / kConfigFile, j.dump(2) + "\n");
}

DemoPair load_or_make_demos(const Environment& env, const ExperimentConfig& cfg) {
  const fs::path train = cfg.out / kTrainFile, test = cfg.out / kTestFile;
  if (fs::exists(train) && fs::exists(test))
    return {load_demo_set(train, env.domain()), load_demo_set(test, env.domain())};
  DemoPair demos = make_demos(env, cfg, cfg.sigma_mult);
  save_demo_set(train, demos.train, env.domain());
  save_demo_set(test, demos.test, env.domain());
  return demos;
}

void write_metrics(const ExperimentConfig& cfg, const MetricsReport& report) {
  write_text_file(cfg.out / kMetricsCsv, report.to_csv());
  write_text_file(cfg.out / kMetricsJson, json{{"config", cfg.to_json()}, {"metrics", report.to_json()}}.dump(2) + "\n");
}

int cmd_gen_demos(const ExperimentConfig& cfg) {
  const auto env = make_environment(cfg.env);
  const DemoPair demos = make_demos(*env, cfg, cfg.sigma_mult);
  save_demo_set(cfg.out / kTrainFile, demos.train, env->domain());
  save_demo_set(cfg.out / kTestFile, demos.test, env->domain());
  echo_config(cfg, "gen-demos");
  for (const DemoSet* set : {&demos.train, &demos.test})
    for (std::size_t i = 0; i < set->demos.size(); ++i)
      std::printf("%s demo %zu: %s\n", set->split.c_str(), i,
                  task_success(*env, set->demos[i]) ? "success" : "failure");
  return kExitOk;
}

int cmd_train(const ExperimentConfig& cfg) {
  const auto env = make_environment(cfg.env);
  const DemoPair demos = load_or_make_demos(*env, cfg);
  const std::string method = cfg.baseline.empty() ? "plunder" : cfg.baseline;
  const TrainOutcome out = train_method(method, *env, demos.train, cfg);
  write_text_file(cfg.out / policy_file_for(method), serialize_policy(out.policy, env->domain()));
  echo_config(cfg, "train");
  std::printf("%s policy (size %zu) written to %s\n", method.c_str(), ast_size(out.policy),
              (cfg.out / policy_file_for(method)).string().c_str());
  if (!out.em) return kExitOk;
  write_text_file(cfg.out / kTraceFile, out.em->trace_jsonl());
  std::printf("gamma %s, %d iterations, %s\n", format_number(out.em->gamma).c_str(), out.em->iterations,
              out.em->converged ? "converged" : "did not converge");
  return out.em->converged ? kExitOk : kExitNotConverged;
}

int cmd_eval(const ExperimentConfig& cfg) {
  const auto env = make_environment(cfg.env);
  MetricsReport report;
  if (!cfg.noise_sweep.empty()) {
    for (double level : cfg.noise_sweep) {
      const DemoPair demos = make_demos(*env, cfg, level);
      const std::string task = task_label(cfg.env, level);
      const fs::path dir = cfg.out / "sweep" / format_number(level);
      fs::create_directories(dir);
      for (const std::string method : {"plunder", "greedy", "oneshot"}) {
        const TrainOutcome out = train_method(method, *env, demos.train, cfg);
        write_text_file(dir / policy_file_for(method), serialize_policy(out.policy, env->domain()));
        evaluate_policy(report, method, task, out.policy, *env, demos.test, cfg);
      }
      evaluate_policy(report, "gt", task, env->gt_policy(), *env, demos.test, cfg);
      log().info("noise level {} done", level);
    }
  } else {
    const DemoPair demos = load_or_make_demos(*env, cfg);
    std::vector<std::pair<std::string, Policy>> policies;
    for (const auto& entry : cfg.policies) {
      const auto eq = entry.find('=');
      const std::string method = entry.substr(0, eq);
      const std::string text = read_text_file(entry.substr(eq + 1));
      policies.emplace_back(method, parse_policy(text, env->domain()));
    }
    if (cfg.policies.empty()) {
      policies.emplace_back("gt", env->gt_policy());
      for (const std::string method : {"plunder", "greedy", "oneshot"}) {
        const fs::path p = cfg.out / policy_file_for(method);
        if (fs::exists(p)) policies.emplace_back(method, parse_policy(read_text_file(p), env->domain()));
      }
    }
    for (const auto& [method, pi] : policies)
      evaluate_policy(report, method, task_label(cfg.env, std::nullopt), pi, *env, demos.test, cfg);
  }
  write_metrics(cfg, report);
  echo_config(cfg, "eval");
  std::cout << report.to_csv();
  return kExitOk;
}

int cmd_rollout(const ExperimentConfig& cfg) {
  const auto env = make_environment(cfg.env);
  const Policy pi =
      cfg.policy_file.empty() ? env->gt_policy() : parse_policy(read_text_file(cfg.policy_file), env->domain());
  const DemoSet set =
      generate_demos(*env, pi, cfg.trials, cfg.horizon_for(*env), cfg.sigma_mult, derive_seed(cfg.seed, 3), "rollout");
  save_demo_set(cfg.out / kRolloutFile, set, env->domain());
  echo_config(cfg, "rollout");
  std::size_t ok = 0;
  for (const auto& t : set.demos) ok += task_success(*env, t);
  std::printf("success %zu/%zu\n", ok, set.demos.size());
  return kExitOk;
}

// Flags that were given on the command line override the config file.
struct FlagBinding {
  CLI::Option* option;
  std::function<void(ExperimentConfig&)> apply;
};

}  // namespace

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Program synthesis from noisy demonstrations with PLUNDER", "plunder"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  ExperimentConfig flags;
  std::string config_path;
  std::string sweep;
  std::vector<std::pair<CLI::App*, std::function<int(const ExperimentConfig&)>>> commands;
  std::vector<FlagBinding> bindings;

  auto add_common = [&](CLI::App* cmd) {
    auto bind = [&](CLI::Option* opt, std::function<void(ExperimentConfig&)> apply) {
      bindings.push_back({opt, std::move(apply)});
    };
    cmd->add_option("--config", config_path, "JSON config; flags override its values");
    bind(cmd->add_option("--env", flags.env, "ss or mg"), [&](ExperimentConfig& c) { c.env = flags.env; });
    bind(cmd->add_option("--seed", flags.seed, "master seed"), [&](ExperimentConfig& c) { c.seed = flags.seed; });
    bind(cmd->add_option("--train", flags.train, "training demonstrations"),
         [&](ExperimentConfig& c) { c.train = flags.train; });
    bind(cmd->add_option("--test", flags.test, "test demonstrations"), [&](ExperimentConfig& c) { c.test = flags.test; });
    bind(cmd->add_option("--horizon", flags.horizon, "steps per demonstration (0: env default)"),
         [&](ExperimentConfig& c) { c.horizon = flags.horizon; });
    bind(cmd->add_option("--sigma-mult", flags.sigma_mult, "actuation noise multiplier"),
         [&](ExperimentConfig& c) { c.sigma_mult = flags.sigma_mult; });
    bind(cmd->add_option("--gamma", flags.gamma, "convergence threshold, nats/step"),
         [&](ExperimentConfig& c) { c.gamma = flags.gamma; });
    bind(cmd->add_option("--gamma-gain", flags.gamma_gain, "threshold above the coin-flip policy, nats/step"),
         [&](ExperimentConfig& c) { c.gamma_gain = flags.gamma_gain; });
    bind(cmd->add_option("--lambda", flags.lambda, "size penalty per AST node"),
         [&](ExperimentConfig& c) { c.lambda = flags.lambda; });
    bind(cmd->add_option("--particles", flags.particles, "particles per demonstration"),
         [&](ExperimentConfig& c) { c.particles = flags.particles; });
    bind(cmd->add_option("--samples", flags.samples, "label sequences sampled per demonstration"),
         [&](ExperimentConfig& c) { c.samples = flags.samples; });
    bind(cmd->add_option("--max-iters", flags.max_iters, "EM iteration cap"),
         [&](ExperimentConfig& c) { c.max_iters = flags.max_iters; });
    bind(cmd->add_option("--threads", flags.threads, "worker threads"),
         [&](ExperimentConfig& c) { c.threads = flags.threads; });
    bind(cmd->add_option("--out", flags.out, "output directory"), [&](ExperimentConfig& c) { c.out = flags.out; });
    bind(cmd->add_option("--eval-particles", flags.eval_particles, "particles when scoring policies"),
         [&](ExperimentConfig& c) { c.eval_particles = flags.eval_particles; });
    bind(cmd->add_option("--trials", flags.trials, "closed-loop rollouts"),
         [&](ExperimentConfig& c) { c.trials = flags.trials; });
  };

  CLI::App* gen = app.add_subcommand("gen-demos", "generate train/test demonstrations from the GT policy");
  add_common(gen);
  commands.emplace_back(gen, cmd_gen_demos);

  CLI::App* train = app.add_subcommand("train", "learn a policy (exit 3 if EM does not converge)");
  add_common(train);
  bindings.push_back({train->add_option("--baseline", flags.baseline, "greedy or oneshot instead of PLUNDER"),
                      [&](ExperimentConfig& c) { c.baseline = flags.baseline; }});
  commands.emplace_back(train, cmd_train);

  CLI::App* eval = app.add_subcommand("eval", "score policies on the test demonstrations");
  add_common(eval);
  bindings.push_back({eval->add_option("--policy", flags.policies, "method=path, repeatable"),
                      [&](ExperimentConfig& c) { c.policies = flags.policies; }});
  bindings.push_back({eval->add_option("--noise-sweep", sweep, "comma-separated multipliers; trains every method"),
                      [&](ExperimentConfig& c) {
                        c.noise_sweep.clear();
                        std::stringstream ss(sweep);
                        for (std::string item; std::getline(ss, item, ',');) {
                          try {
                            std::size_t used = 0;
                            c.noise_sweep.push_back(std::stod(item, &used));
                            if (used != item.size()) throw std::invalid_argument(item);
                          } catch (const std::exception&) {
                            throw ConfigError("bad noise level '" + item + "'");
                          }
                        }
                      }});
  commands.emplace_back(eval, cmd_eval);

  CLI::App* roll = app.add_subcommand("rollout", "closed-loop rollouts of a policy (GT by default)");
  add_common(roll);
  bindings.push_back({roll->add_option("--policy-file", flags.policy_file, "policy in pdsl text"),
                      [&](ExperimentConfig& c) { c.policy_file = flags.policy_file; }});
  commands.emplace_back(roll, cmd_rollout);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    ExperimentConfig cfg;
    if (!config_path.empty()) {
      json j;
      try {
        j = json::parse(read_text_file(config_path));
      } catch (const json::exception& e) {
        throw ConfigError("cannot parse " + config_path + ": " + e.what());
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
      cfg = ExperimentConfig::from_json(j);
    }
    for (const auto& b : bindings)
      if (b.option->count() > 0) b.apply(cfg);
    cfg.validate();
    fs::create_directories(cfg.out);
    for (const auto& [cmd, run] : commands)
      if (cmd->parsed()) return run(cfg);
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace plunder
