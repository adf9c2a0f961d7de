#pragma once

#include <filesystem>

#include "midol/trainer.hpp"

namespace midol {

inline constexpr const char* kCheckpointMagic = "MIDOL1";

struct Checkpoint {
    TrainConfig config;
    ModelState state;
};

/// Text file: the magic line, then one JSON object holding the config, the
/// step counter and every named array as {name, shape, data}. Doubles are
/// written in shortest round-trip form, so load(save(x)) == x bit for bit.
void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config,
                     const ModelState& state);

/// Rebuilds the model from the stored config and overwrites every array.
/// Throws std::runtime_error on a wrong magic line, a missing or surplus
/// array, or a shape that disagrees with the config.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace midol
