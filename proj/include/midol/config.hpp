#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "midol/trainer.hpp"

namespace midol {

/// Field names, in declaration order.
std::vector<std::string> config_keys();

/// Sets one field from its text form. Throws std::invalid_argument naming
/// the key on an unknown key or a value of the wrong type.
void apply_setting(TrainConfig& config, std::string_view key, std::string_view value);

/// Flat `key=value` lines; blank lines and lines starting with '#' are
/// skipped. Values land on top of `base`. Not validated.
TrainConfig parse_config_text(std::string_view text, TrainConfig base = {});

/// Defaults, then the file (if any), then the overrides in order; validated.
TrainConfig parse_config(const std::optional<std::filesystem::path>& path,
                         const std::vector<std::pair<std::string, std::string>>& overrides = {});

/// One `key=value` line per field; doubles carry 17 significant digits so
/// parse_config_text gives back an identical config.
std::string format_config(const TrainConfig& config);

nlohmann::json config_to_json(const TrainConfig& config);
TrainConfig config_from_json(const nlohmann::json& j);

}  // namespace midol
