#pragma once

#include <json.hpp>
#include <string>

#include "pvmlab/config.h"

namespace pvmlab {

using Json = nlohmann::json;

void to_json(Json& j, const ModelConfig& c);
void from_json(const Json& j, ModelConfig& c);
void to_json(Json& j, const PvmConfig& c);
void from_json(const Json& j, PvmConfig& c);

// Compact JSON with sorted keys; stable input for hashing.
std::string canonical_json(const Json& j);

}  // namespace pvmlab
