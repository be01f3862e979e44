#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfedpgp/engine.hpp"

namespace dfedpgp {

using Json = nlohmann::json;

Json to_json(const ExperimentConfig& config);

/// Strict conversion: every key must exist in the default document and have
/// a compatible type. Missing keys keep their defaults.
ExperimentConfig config_from_json(const Json& doc);

/// Applies `dotted.key=value` to `doc`. The value is read as JSON when it
/// parses, otherwise as a string. Unknown keys and type mismatches throw
/// ConfigError naming the key.
void apply_override(Json& doc, const std::string& assignment);

/// Reads the config file (empty path: defaults), applies overrides in order
/// and validates.
ExperimentConfig load_config(const std::string& path,
                             std::span<const std::string> overrides = {});

}  // namespace dfedpgp
