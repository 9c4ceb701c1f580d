#pragma once

#include <string>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "muonlab/error.hpp"

namespace muonlab::json_fields {

// Typed reads from a JSON object. Errors name the full field path so config
// problems can be reported as "finetune.steps: expected integer".

inline std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

template <typename T>
T as(const nlohmann::json& v, const std::string& path) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ContractError(path + ": expected boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ContractError(path + ": expected integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (v.get<long long>() < 0) throw ContractError(path + ": expected non-negative integer");
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ContractError(path + ": expected number");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ContractError(path + ": expected string");
  }
  return v.get<T>();
}

template <typename T>
T read_or(const nlohmann::json& obj, const std::string& key, T fallback,
          const std::string& prefix = {}) {
  if (!obj.is_object()) throw ContractError((prefix.empty() ? "<root>" : prefix) + ": expected object");
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  return as<T>(*it, join(prefix, key));
}

template <typename T>
T require(const nlohmann::json& obj, const std::string& key, const std::string& prefix = {}) {
  if (!obj.is_object()) throw ContractError((prefix.empty() ? "<root>" : prefix) + ": expected object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ContractError(join(prefix, key) + ": missing required field");
  return as<T>(*it, join(prefix, key));
}

}  // namespace muonlab::json_fields
