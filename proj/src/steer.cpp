#include "gatescope/steer.hpp"

#include <cmath>
#include <sstream>

#include "gatescope/error.hpp"

namespace gatescope {

std::vector<double> effective_multipliers(const SteeringRecipe& recipe, const TensorMatrix& dec) {
  recipe.validate();
  std::vector<double> out;
  out.reserve(recipe.components.size());
  for (const auto& c : recipe.components) out.push_back(c.alpha_abs / decoder_norm(dec, c.feature));
  return out;
}

SteeringVector compile(const SteeringRecipe& recipe, const TensorMatrix& dec) {
  const auto mult = effective_multipliers(recipe, dec);
  SteeringVector sv;
  sv.values.assign(dec.d_model(), 0.0);
  sv.provenance = recipe;
  for (std::size_t i = 0; i < recipe.components.size(); ++i) {
    const auto row = dec.row(recipe.components[i].feature.index);
    for (std::size_t c = 0; c < row.size(); ++c) sv.values[c] += mult[i] * static_cast<double>(row[c]);
  }
  double ss = 0.0;
  for (double v : sv.values) ss += v * v;
  sv.norm = std::sqrt(ss);
  return sv;
}

SteeringVector zero_steering(std::size_t d_model) {
  SteeringVector sv;
  sv.values.assign(d_model, 0.0);
  sv.provenance.label = "unsteered";
  return sv;
}

std::optional<std::string> coherence_warning(const SteeringVector& sv, std::optional<double> threshold) {
  if (!threshold || sv.norm <= *threshold) return std::nullopt;
  std::ostringstream msg;
  msg << "steering norm " << sv.norm << " exceeds coherence threshold " << *threshold;
  if (!sv.provenance.label.empty()) msg << " (recipe '" << sv.provenance.label << "')";
  return msg.str();
}

json to_json(const SteeringVector& sv) {
  json j;
  j["recipe"] = to_json(sv.provenance);
  j["norm"] = sv.norm;
  j["values"] = sv.values;
  return j;
}

}  // namespace gatescope
