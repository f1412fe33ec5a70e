#pragma once

#include <filesystem>

#include "posefree/trainer.hpp"

namespace posefree {

// Single-file archive: magic line, JSON header (config, step, rng, optimizer
// count, tensor table, pseudo-view records, metric history), then the raw
// double blob of model tensors, Adam moments and pseudo-view images.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace posefree
