#pragma once

// Flat `key = value` config files mirroring the ModelConfig / TrainConfig
// field names. Lines starting with '#' are comments. CLI flags override
// file values.

#include <map>
#include <string>

#include "nledn/model.hpp"
#include "nledn/training.hpp"

namespace nledn {

std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> read_config_file(const std::string& path);

// Applies recognized keys to the configs; throws on unknown keys or
// malformed values.
void apply_config(const std::map<std::string, std::string>& kv, ModelConfig& model,
                  TrainConfig& train);

std::string config_to_text(const ModelConfig& model, const TrainConfig& train);

}  // namespace nledn
