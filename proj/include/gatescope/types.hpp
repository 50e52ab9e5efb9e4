#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace gatescope {

using json = nlohmann::ordered_json;

// Index of an SAE feature (a row of the decoder matrix).
struct FeatureId {
  std::uint32_t index = 0;

  auto operator<=>(const FeatureId&) const = default;
};

// Canonical surface word-forms for one emotion in one language.
// Forms are exact strings: no prefixes, no regex, no whitespace.
struct LexemeSet {
  std::string emotion;
  std::string language = "en";
  std::vector<std::string> forms;
  std::string definition;

  void validate() const;
};

struct SteeringComponent {
  FeatureId feature;
  double alpha_abs = 0.0;  // may be negative (suppression)

  bool operator==(const SteeringComponent&) const = default;
};

struct SteeringRecipe {
  std::vector<SteeringComponent> components;
  std::string label;

  void validate() const;
  bool operator==(const SteeringRecipe&) const = default;
};

// Sampling protocol shared by every generation in a run.
struct GenerationConfig {
  double temperature = 0.7;
  double top_p = 0.9;
  int max_new_tokens = 80;
  std::vector<std::int64_t> seeds{101, 202, 303};
  // Set to allow max_new_tokens outside the usual [60, 140] window.
  bool allow_any_length = false;

  void validate() const;
};

// Seed pools used by the 7-, 3- and 2-seed protocols.
inline const std::vector<std::int64_t> kSevenSeeds{101, 202, 303, 404, 505, 606, 707};
inline const std::vector<std::int64_t> kThreeSeeds{101, 202, 303};
inline const std::vector<std::int64_t> kTwoSeeds{101, 202};

json to_json(const LexemeSet& lex);
LexemeSet lexeme_set_from_json(const json& j);
// Accepts either a single object or {"sets": [...]}.
std::vector<LexemeSet> lexeme_sets_from_json(const json& j);

json to_json(const SteeringRecipe& recipe);
// {"components":[{"f":18432,"alpha":8.0}],"label":"joy_v4c"}
SteeringRecipe recipe_from_json(const json& j);

json to_json(const GenerationConfig& cfg);
GenerationConfig generation_config_from_json(const json& j);

}  // namespace gatescope
