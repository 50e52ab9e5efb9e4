#include "gatescope/types.hpp"

#include <cmath>
#include <set>

#include "gatescope/error.hpp"
#include "json_util.hpp"

namespace gatescope {

void LexemeSet::validate() const {
  if (emotion.empty()) throw Error("lexeme set: empty emotion label");
  if (forms.empty()) throw Error("lexeme set '" + emotion + "': no word forms");
  for (const auto& f : forms) {
    if (f.empty()) throw Error("lexeme set '" + emotion + "': empty form");
    for (char c : f) {
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r')
        throw Error("lexeme set '" + emotion + "': form '" + f + "' contains whitespace");
    }
  }
}

void SteeringRecipe::validate() const {
  if (components.empty()) throw Error("recipe '" + label + "': no components");
  std::set<std::uint32_t> seen;
  for (const auto& c : components) {
    if (!std::isfinite(c.alpha_abs)) throw Error("recipe '" + label + "': non-finite alpha");
    if (!seen.insert(c.feature.index).second)
      throw Error("recipe '" + label + "': duplicate feature f" + std::to_string(c.feature.index));
  }
}

void GenerationConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw Error("generation config: temperature must be > 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw Error("generation config: top_p must be in (0, 1]");
  if (max_new_tokens < 1) throw Error("generation config: max_new_tokens must be >= 1");
  if (!allow_any_length && (max_new_tokens < 60 || max_new_tokens > 140))
    throw Error("generation config: max_new_tokens outside [60, 140]");
  if (seeds.empty()) throw Error("generation config: no seeds");
}

json to_json(const LexemeSet& lex) {
  json j;
  j["emotion"] = lex.emotion;
  j["language"] = lex.language;
  j["forms"] = lex.forms;
  j["definition"] = lex.definition;
  return j;
}

LexemeSet lexeme_set_from_json(const json& j) {
  constexpr std::string_view ctx = "lexeme set";
  detail::require_only(j, {"emotion", "language", "forms", "definition"}, ctx);
  LexemeSet lex;
  lex.emotion = detail::get<std::string>(j, "emotion", ctx);
  lex.language = detail::get_or<std::string>(j, "language", "en", ctx);
  lex.forms = detail::get<std::vector<std::string>>(j, "forms", ctx);
  lex.definition = detail::get_or<std::string>(j, "definition", "", ctx);
  lex.validate();
  return lex;
}

std::vector<LexemeSet> lexeme_sets_from_json(const json& j) {
  std::vector<LexemeSet> out;
  if (j.is_object() && j.contains("sets")) {
    detail::require_only(j, {"schema_version", "language", "sets"}, "lexeme file");
    for (const auto& s : j.at("sets")) out.push_back(lexeme_set_from_json(s));
  } else if (j.is_array()) {
    for (const auto& s : j) out.push_back(lexeme_set_from_json(s));
  } else {
    out.push_back(lexeme_set_from_json(j));
  }
  return out;
}

json to_json(const SteeringRecipe& recipe) {
  json comps = json::array();
  for (const auto& c : recipe.components) {
    json cj;
    cj["f"] = c.feature.index;
    cj["alpha"] = c.alpha_abs;
    comps.push_back(std::move(cj));
  }
  json j;
  j["components"] = std::move(comps);
  j["label"] = recipe.label;
  return j;
}

SteeringRecipe recipe_from_json(const json& j) {
  constexpr std::string_view ctx = "recipe";
  detail::require_only(j, {"components", "label"}, ctx);
  SteeringRecipe r;
  r.label = detail::get_or<std::string>(j, "label", "", ctx);
  const json& comps = detail::field(j, "components", ctx);
  if (!comps.is_array()) throw Error("recipe: 'components' must be an array");
  for (const auto& c : comps) {
    detail::require_only(c, {"f", "alpha"}, "recipe component");
    SteeringComponent sc;
    const auto f = detail::get<std::int64_t>(c, "f", "recipe component");
    if (f < 0) throw Error("recipe component: negative feature id");
    sc.feature = FeatureId{static_cast<std::uint32_t>(f)};
    sc.alpha_abs = detail::get<double>(c, "alpha", "recipe component");
    r.components.push_back(sc);
  }
  r.validate();
  return r;
}

json to_json(const GenerationConfig& cfg) {
  json j;
  j["temperature"] = cfg.temperature;
  j["top_p"] = cfg.top_p;
  j["max_new_tokens"] = cfg.max_new_tokens;
  j["seeds"] = cfg.seeds;
  return j;
}

GenerationConfig generation_config_from_json(const json& j) {
  constexpr std::string_view ctx = "generation config";
  detail::require_only(j, {"temperature", "top_p", "max_new_tokens", "seeds", "allow_any_length"}, ctx);
  GenerationConfig cfg;
  cfg.temperature = detail::get_or<double>(j, "temperature", cfg.temperature, ctx);
  cfg.top_p = detail::get_or<double>(j, "top_p", cfg.top_p, ctx);
  cfg.max_new_tokens = detail::get_or<int>(j, "max_new_tokens", cfg.max_new_tokens, ctx);
  cfg.seeds = detail::get_or<std::vector<std::int64_t>>(j, "seeds", cfg.seeds, ctx);
  cfg.allow_any_length = detail::get_or<bool>(j, "allow_any_length", false, ctx);
  cfg.validate();
  return cfg;
}

}  // namespace gatescope
