#pragma once

#include <json.hpp>

#include "cpopt/core.hpp"

namespace cpopt {

// {"dims": [{"kind": "continuous", "lo": 0, "hi": 1}, {"kind": "discrete", "levels": [...]}]}
nlohmann::json space_to_json(const ActionSpace& space);
ActionSpace space_from_json(const nlohmann::json& j);

// Compact textual form used in run-config files:
//   "continuous 0 1"  or  "discrete 0 0.5 1"
std::string dim_to_string(const DimSpec& dim);
DimSpec dim_from_string(const std::string& text);

}  // namespace cpopt
