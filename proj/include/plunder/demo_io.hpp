#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "plunder/env.hpp"

namespace plunder {

/// {env, split, seed, sigma_mult, sigma_act, demos: [{seed, states: [{var: value}], obs: [[...]], gt_actions: [...]}]}
nlohmann::json demo_set_to_json(const DemoSet& set, const Domain& domain);
DemoSet demo_set_from_json(const nlohmann::json& j, const Domain& domain);

void save_demo_set(const std::filesystem::path& path, const DemoSet& set, const Domain& domain);
DemoSet load_demo_set(const std::filesystem::path& path, const Domain& domain);

/// Writes `content` to `path`, replacing it; throws Error on I/O failure.
void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace plunder
