#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gatescope/judge_clients.hpp"
#include "gatescope/pipeline.hpp"
#include "gatescope/toy.hpp"

namespace gatescope {

// Tool configuration. Keys are read from a JSON file; GATESCOPE_* environment
// variables override them. Judge API keys come from the variable named by
// each judge's "api_key_env" (default GATESCOPE_KEY_<ID>).
struct Config {
  std::string backend = "toy";
  std::string backend_url;
  std::filesystem::path fixture_dir = "fixture";
  std::vector<HttpJudgeConfig> judges;
  std::filesystem::path cache_dir;  // empty: judge replies are not cached
  bool replay_only = false;
  json plan = json::object();       // RunPlan keys applied over the defaults
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
std::optional<std::string> process_env(const std::string& name);

Config config_from_json(const json& j, const EnvLookup& env = process_env);
// No path: defaults plus environment.
Config load_config(const std::optional<std::filesystem::path>& path, const EnvLookup& env = process_env);
// API keys are never written.
json to_json(const Config& c);

std::string default_key_env(std::string_view judge_id);

// Desk-scale plan for a toy fixture: the planted emotions, each confounder's
// drift, and two noise features drawn with `seed` as random controls.
RunPlan toy_run_plan(const ToyPlan& toy, std::uint64_t seed = 0);

// Layers a JSON overlay over a plan. An overlay naming "lexemes" or
// "emotions" replaces the emotion list instead of extending it.
RunPlan overlay_plan(const RunPlan& base, const json& overlay);

}  // namespace gatescope
