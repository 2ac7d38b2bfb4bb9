#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "tased/model.hpp"
#include "tased/train.hpp"

namespace tased {

struct PathsConfig {
  std::string data_root;
  /// Validation videos; empty disables validation.
  std::string val_root;
  std::string output_dir;
  /// Checkpoint to resume training from, or the weights used by predict.
  std::string checkpoint;
};

/// One JSON document:
///   { "model": {...}, "train": {...}, "paths": {...} }
/// Every section is optional and falls back to defaults; unknown keys at any
/// level are rejected. "model.preset" ("toy", "tiny" or "paperlike") selects
/// the base values the other model keys override.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  PathsConfig paths;
};

/// Throws ConfigError with the parse location or offending key.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_json(const RunConfig& config);

}  // namespace tased
