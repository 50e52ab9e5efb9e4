#pragma once

#include <string>

#include "gatescope/tensor.hpp"
#include "gatescope/types.hpp"

namespace gatescope {

// Human-readable summary of a RunReport JSON document.
std::string render_markdown(const json& report);

// Hit rate against alpha, one line per Stage-3 candidate that had a hit.
std::string plot_hit_rate_svg(const json& report);

// Histogram of decoder row norms.
std::string plot_norm_histogram_svg(const TensorMatrix& dec, std::size_t bins = 30);

}  // namespace gatescope
