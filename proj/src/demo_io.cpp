#include "plunder/demo_io.hpp"

#include <fstream>
#include <sstream>

namespace plunder {

using nlohmann::json;

json demo_set_to_json(const DemoSet& set, const Domain& domain) {
  const auto& vars = domain.signature.variables();
  json demos = json::array();
  for (const auto& traj : set.demos) {
    json states = json::array();
    for (const auto& s : traj.states) {
      json obj = json::object();
      for (std::size_t i = 0; i < vars.size(); ++i) obj[vars[i].name] = s[static_cast<Eigen::Index>(i)];
      states.push_back(std::move(obj));
    }
    json obs = json::array();
    for (const auto& z : traj.observations) obs.push_back(std::vector<double>(z.data(), z.data() + z.size()));
    json labels = json::array();
    for (ActionId a : traj.gt_actions) labels.push_back(domain.actions.name(a));
    demos.push_back({{"seed", traj.seed}, {"states", std::move(states)}, {"obs", std::move(obs)},
                     {"gt_actions", std::move(labels)}});
  }
  return {{"env", set.env},
          {"split", set.split},
          {"seed", set.seed},
          {"sigma_mult", set.sigma_mult},
          {"sigma_act", std::vector<double>(set.sigma_act.data(), set.sigma_act.data() + set.sigma_act.size())},
          {"demos", std::move(demos)}};
}

DemoSet demo_set_from_json(const json& j, const Domain& domain) {
  try {
    DemoSet set;
    set.env = j.at("env").get<std::string>();
    if (set.env != domain.name) throw Error("demo set is for env '" + set.env + "', expected '" + domain.name + "'");
    set.split = j.value("split", "");
    set.seed = j.value("seed", std::uint64_t{0});
    set.sigma_mult = j.value("sigma_mult", 1.0);
    const auto sig = j.value("sigma_act", std::vector<double>{});
    set.sigma_act = Eigen::Map<const Eigen::VectorXd>(sig.data(), static_cast<Eigen::Index>(sig.size()));
    const auto& vars = domain.signature.variables();
    for (const auto& d : j.at("demos")) {
      Trajectory traj;
      traj.seed = d.value("seed", std::uint64_t{0});
      for (const auto& obj : d.at("states")) {
        State s(static_cast<Eigen::Index>(vars.size()));
        for (std::size_t i = 0; i < vars.size(); ++i) s[static_cast<Eigen::Index>(i)] = obj.at(vars[i].name).get<double>();
        traj.states.push_back(std::move(s));
      }
      for (const auto& z : d.at("obs")) {
        const auto v = z.get<std::vector<double>>();
        traj.observations.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
      }
      if (d.contains("gt_actions"))
        for (const auto& a : d.at("gt_actions")) traj.gt_actions.push_back(domain.actions.at(a.get<std::string>()));
      if (traj.observations.size() != traj.states.size() ||
          (!traj.gt_actions.empty() && traj.gt_actions.size() != traj.states.size()))
        throw Error("demo sequences have mismatched lengths");
      set.demos.push_back(std::move(traj));
    }
    if (set.demos.empty()) throw Error("demo set is empty");
    return set;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed demo set: ") + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw Error("failed writing " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_demo_set(const std::filesystem::path& path, const DemoSet& set, const Domain& domain) {
  write_text_file(path, demo_set_to_json(set, domain).dump() + "\n");
}

DemoSet load_demo_set(const std::filesystem::path& path, const Domain& domain) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw Error("cannot parse " + path.string() + ": " + e.what());
  }
  return demo_set_from_json(j, domain);
}

}  // namespace plunder
