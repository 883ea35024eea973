#pragma once

#include "cbfkit/config.hpp"
#include "json_util.hpp"

// JSON forms shared by recipe files and checkpoints.
namespace cbfkit::jsonutil {

json tree_to_json(const TreeSpec& spec);
TreeSpec tree_from_json(const json& j, const std::string& path);

json system_to_json(const SystemSpec& spec);
SystemSpec system_from_json(const json& j, const std::string& path);

json environment_to_json(const EnvironmentSpec& spec);
EnvironmentSpec environment_from_json(const json& j, const std::string& path);

// include_derived adds input_dim and the normalization spans (checkpoint
// form); the recipe form omits them because they are computed.
json model_to_json(const ModelConfig& cfg, bool include_derived);
ModelConfig model_from_json(const json& j, const std::string& path);

}  // namespace cbfkit::jsonutil
