#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "posefree/trainer.hpp"

namespace posefree {

// One user-facing config key. Keys are flat; augmentation fields carry an
// "aug_" prefix.
struct ConfigField {
  std::string key;
  std::string description;
};
const std::vector<ConfigField>& train_config_fields();

nlohmann::ordered_json train_config_to_json(const TrainConfig& cfg);
// Overrides the fields present in j on top of base; unknown keys and
// mistyped values throw std::invalid_argument.
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base = {});

// Config file: TrainConfig keys plus run-level paths and switches.
struct RunConfig {
  TrainConfig train;
  std::string dataset;
  std::string out;
  std::string mode = "pose_free";  // pose_free | posed
  std::string toy_prior;           // ToyDenoiser weights when prior = toy
  int workers = 1;
};

const std::vector<ConfigField>& run_config_fields();
nlohmann::ordered_json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j, const RunConfig& base = {});
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace posefree
