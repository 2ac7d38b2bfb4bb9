#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tased/config.hpp"
#include "tased/data.hpp"
#include "tased/metrics.hpp"

namespace tased::cli {

struct TrainCommandOptions {
  std::filesystem::path config;
  /// Overrides paths.checkpoint as the checkpoint to resume from.
  std::optional<std::filesystem::path> resume;
  /// Overrides paths.output_dir.
  std::optional<std::filesystem::path> output_dir;
  /// Overrides paths.data_root.
  std::optional<std::filesystem::path> data_root;
  /// Progress line every this many steps (0 = quiet).
  std::size_t print_every = 50;
};

struct TrainResult {
  std::vector<std::filesystem::path> checkpoints;  // in write order; last is final
  std::filesystem::path log;
  std::size_t steps = 0;
  double final_loss = 0.0;
};

/// Trains per the config, writing <out>/train_log.csv, <out>/config.json and
/// checkpoints <out>/checkpoint_NNNNNN.tasd (+ .json sidecars) at every
/// decoder-rate decay and at the final step.
TrainResult cmd_train(const TrainCommandOptions& options, std::ostream& out);

struct PredictCommandOptions {
  std::filesystem::path config;
  std::filesystem::path checkpoint;
  /// One video directory (containing frames/) or a dataset root.
  std::filesystem::path input;
  std::filesystem::path output;
  std::size_t batch = 4;
};

/// Writes one %05d.png per input frame at native resolution. For a dataset
/// root, maps go to <output>/<video-id>/. Returns the number of maps.
std::size_t cmd_predict(const PredictCommandOptions& options, std::ostream& out);

enum class PoolMode { global, per_video };

struct EvalCommandOptions {
  std::filesystem::path predictions;
  std::filesystem::path ground_truth;
  /// Directory for metrics.csv and metrics.json; defaults to predictions.
  std::optional<std::filesystem::path> output;
  PoolMode pool = PoolMode::global;
  std::size_t splits = 100;
  std::uint64_t seed = 0;
};

struct EvalResult {
  std::vector<VideoReport> videos;
  MetricMeans aggregate;
  std::filesystem::path csv;
  std::filesystem::path json;
};

EvalResult cmd_eval(const EvalCommandOptions& options, std::ostream& out);

struct SummaryOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::string> preset;
  std::optional<std::string> aggregation;
  std::optional<std::string> upsampling;
  std::optional<std::size_t> clip_length;
  bool json = false;
};

void cmd_summary(const SummaryOptions& options, std::ostream& out);
std::string summary_json(const ModelSummary& summary, const ModelConfig& config);

void cmd_synth(const std::filesystem::path& root, const SynthParams& params, std::ostream& out);

/// Full command-line entry point. Returns the process exit code: 0 success,
/// 1 runtime failure, 2 usage or configuration error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tased::cli
