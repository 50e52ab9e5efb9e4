#pragma once

// Strict JSON field access used by every file-format reader.

#include <initializer_list>
#include <string>
#include <string_view>

#include "gatescope/error.hpp"
#include "gatescope/types.hpp"

namespace gatescope::detail {

inline void require_object(const json& j, std::string_view ctx) {
  if (!j.is_object()) throw Error(std::string(ctx) + ": expected a JSON object");
}

// Unknown fields are rejected, not ignored.
inline void require_only(const json& j, std::initializer_list<std::string_view> allowed,
                         std::string_view ctx) {
  require_object(j, ctx);
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) throw Error(std::string(ctx) + ": unknown field '" + key + "'");
  }
}

inline const json& field(const json& j, std::string_view key, std::string_view ctx) {
  auto it = j.find(std::string(key));
  if (it == j.end()) throw Error(std::string(ctx) + ": missing field '" + std::string(key) + "'");
  return *it;
}

template <class T>
T get(const json& j, std::string_view key, std::string_view ctx) {
  const json& v = field(j, key, ctx);
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string(ctx) + ": field '" + std::string(key) + "' has the wrong type");
  }
}

template <class T>
T get_or(const json& j, std::string_view key, T fallback, std::string_view ctx) {
  if (!j.contains(std::string(key))) return fallback;
  return get<T>(j, key, ctx);
}

inline json parse_json(std::string_view text, std::string_view ctx) {
  try {
    return json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string(ctx) + ": invalid JSON (" + e.what() + ")");
  }
}

}  // namespace gatescope::detail
