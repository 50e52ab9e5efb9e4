#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "gatescope/types.hpp"

namespace gatescope {

// Data files under data/ are compiled into the library. Names are paths
// relative to data/, e.g. "templates/forced12.txt".
std::string_view asset(std::string_view name);
json asset_json(std::string_view name);
std::vector<std::string> asset_names();

}  // namespace gatescope
