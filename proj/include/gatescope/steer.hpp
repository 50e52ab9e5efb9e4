#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gatescope/tensor.hpp"
#include "gatescope/types.hpp"

namespace gatescope {

// Residual-stream steering vector compiled from a recipe.
struct SteeringVector {
  std::vector<double> values;  // length d_model
  double norm = 0.0;
  SteeringRecipe provenance;
};

// sv = sum_i (alpha_i / ||W_dec[f_i]||) * W_dec[f_i]. Each component is
// normalized before summation; the joint norm is reported, never clamped.
SteeringVector compile(const SteeringRecipe& recipe, const TensorMatrix& dec);

// alpha_i / ||W_dec[f_i]|| per component.
std::vector<double> effective_multipliers(const SteeringRecipe& recipe, const TensorMatrix& dec);

// Zero vector of the given width (an unsteered run expressed as a vector).
SteeringVector zero_steering(std::size_t d_model);

// Warning text when ||sv|| exceeds the threshold; nullopt when within it or
// when no threshold is configured.
std::optional<std::string> coherence_warning(const SteeringVector& sv, std::optional<double> threshold);

json to_json(const SteeringVector& sv);

}  // namespace gatescope
