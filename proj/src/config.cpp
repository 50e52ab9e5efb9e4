#include "gatescope/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "gatescope/error.hpp"
#include "gatescope/rng.hpp"
#include "json_util.hpp"

namespace gatescope {

std::optional<std::string> process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (!v) return std::nullopt;
  return std::string(v);
}

std::string default_key_env(std::string_view judge_id) {
  std::string out = "GATESCOPE_KEY_";
  for (char c : judge_id)
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::toupper(static_cast<unsigned char>(c)))
                                                               : '_');
  return out;
}

namespace {

bool parse_bool(const std::string& s, const std::string& name) {
  if (s == "1" || s == "true" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "no" || s.empty()) return false;
  throw Error("config: " + name + " must be true or false, got '" + s + "'");
}

HttpJudgeConfig judge_from_json(const json& j, const EnvLookup& env) {
  using namespace detail;
  constexpr std::string_view ctx = "config judge";
  require_only(j, {"id", "endpoint", "model", "api_key_env", "temperature", "max_tokens", "retries", "backoff_ms",
                   "timeout_s"},
               ctx);
  HttpJudgeConfig c;
  c.id = get<std::string>(j, "id", ctx);
  c.endpoint = get<std::string>(j, "endpoint", ctx);
  c.model = get<std::string>(j, "model", ctx);
  c.temperature = get_or<double>(j, "temperature", c.temperature, ctx);
  c.max_tokens = get_or<int>(j, "max_tokens", c.max_tokens, ctx);
  c.retries = get_or<int>(j, "retries", c.retries, ctx);
  c.backoff = std::chrono::milliseconds(get_or<long>(j, "backoff_ms", c.backoff.count(), ctx));
  c.timeout = std::chrono::seconds(get_or<long>(j, "timeout_s", c.timeout.count(), ctx));
  const auto key_env = get_or<std::string>(j, "api_key_env", default_key_env(c.id), ctx);
  if (auto key = env(key_env)) c.api_key = *key;
  return c;
}

}  // namespace

Config config_from_json(const json& j, const EnvLookup& env) {
  using namespace detail;
  constexpr std::string_view ctx = "config";
  require_only(j, {"backend", "backend_url", "fixture_dir", "judges", "cache_dir", "replay_only", "plan"}, ctx);
  Config c;
  c.backend = get_or<std::string>(j, "backend", c.backend, ctx);
  c.backend_url = get_or<std::string>(j, "backend_url", c.backend_url, ctx);
  c.fixture_dir = get_or<std::string>(j, "fixture_dir", c.fixture_dir.string(), ctx);
  c.cache_dir = get_or<std::string>(j, "cache_dir", "", ctx);
  c.replay_only = get_or<bool>(j, "replay_only", false, ctx);
  if (j.contains("judges")) {
    if (!j["judges"].is_array()) throw Error("config: judges must be an array");
    for (const auto& jj : j["judges"]) c.judges.push_back(judge_from_json(jj, env));
  }
  if (j.contains("plan")) {
    require_object(j["plan"], "config plan");
    c.plan = j["plan"];
  }

  if (auto v = env("GATESCOPE_BACKEND")) c.backend = *v;
  if (auto v = env("GATESCOPE_BACKEND_URL")) c.backend_url = *v;
  if (auto v = env("GATESCOPE_FIXTURE_DIR")) c.fixture_dir = *v;
  if (auto v = env("GATESCOPE_CACHE_DIR")) c.cache_dir = *v;
  if (auto v = env("GATESCOPE_REPLAY_ONLY")) c.replay_only = parse_bool(*v, "GATESCOPE_REPLAY_ONLY");
  if (c.backend != "toy" && c.backend != "remote") throw Error("config: backend must be toy or remote");
  return c;
}

Config load_config(const std::optional<std::filesystem::path>& path, const EnvLookup& env) {
  if (!path) return config_from_json(json::object(), env);
  std::ifstream in(*path, std::ios::binary);
  if (!in) throw Error("config: cannot open " + path->string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return config_from_json(detail::parse_json(ss.str(), "config " + path->string()), env);
}

json to_json(const Config& c) {
  json j;
  j["backend"] = c.backend;
  j["backend_url"] = c.backend_url;
  j["fixture_dir"] = c.fixture_dir.string();
  j["judges"] = json::array();
  for (const auto& jc : c.judges)
    j["judges"].push_back({{"id", jc.id},
                           {"endpoint", jc.endpoint},
                           {"model", jc.model},
                           {"temperature", jc.temperature},
                           {"max_tokens", jc.max_tokens},
                           {"retries", jc.retries},
                           {"backoff_ms", jc.backoff.count()},
                           {"timeout_s", jc.timeout.count()}});
  j["cache_dir"] = c.cache_dir.string();
  j["replay_only"] = c.replay_only;
  j["plan"] = c.plan;
  return j;
}

RunPlan toy_run_plan(const ToyPlan& toy, std::uint64_t seed) {
  RunPlan p;
  auto add = [&](const std::string& emotion) {
    for (const auto& l : p.lexemes)
      if (l.emotion == emotion) return;
    const auto* wf = find_word_forms(emotion);
    if (!wf) throw Error("toy plan: no shipped word-form list for '" + emotion + "'");
    p.lexemes.push_back(*wf);
  };
  for (const auto& g : toy.gates) add(g.emotion);
  for (const auto& c : toy.confounders) {
    add(c.emotion);
    p.drift[c.emotion] = c.drift_emotion;
  }
  const auto noise = toy.noise_features();
  if (noise.size() < 2) throw Error("toy plan: fewer than two unplanted features for controls");
  const CounterRng rng(seed, 0x636f6e74726f6c73ULL);
  const auto a = rng.below(0, noise.size());
  auto b = rng.below(1, noise.size() - 1);
  if (b >= a) ++b;
  p.controls = {FeatureId{noise[std::min(a, b)]}, FeatureId{noise[std::max(a, b)]}};
  p.seed = seed;
  return p;
}

RunPlan overlay_plan(const RunPlan& base, const json& overlay) {
  detail::require_object(overlay, "plan overlay");
  json j = to_json(base);
  if (overlay.contains("lexemes") || overlay.contains("emotions")) j.erase("lexemes");
  j.merge_patch(overlay);
  RunPlan p = run_plan_from_json(j);
  p.validate();
  return p;
}

}  // namespace gatescope
