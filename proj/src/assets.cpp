#include "gatescope/assets.hpp"

#include <cstddef>
#include <utility>

#include "gatescope/error.hpp"
#include "json_util.hpp"

namespace gatescope {
namespace detail {
extern const std::pair<std::string_view, std::string_view> kEmbeddedAssets[];
extern const std::size_t kEmbeddedAssetCount;
}  // namespace detail

std::string_view asset(std::string_view name) {
  for (std::size_t i = 0; i < detail::kEmbeddedAssetCount; ++i)
    if (detail::kEmbeddedAssets[i].first == name) return detail::kEmbeddedAssets[i].second;
  throw Error("no embedded data file '" + std::string(name) + "'");
}

json asset_json(std::string_view name) { return detail::parse_json(asset(name), name); }

std::vector<std::string> asset_names() {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < detail::kEmbeddedAssetCount; ++i) out.emplace_back(detail::kEmbeddedAssets[i].first);
  return out;
}

}  // namespace gatescope
