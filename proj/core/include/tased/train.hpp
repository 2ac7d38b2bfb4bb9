#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tased/archive.hpp"
#include "tased/autograd.hpp"
#include "tased/data.hpp"
#include "tased/model.hpp"
#include "tased/rng.hpp"

namespace tased {

enum class DecayMode { steps, patience };

std::string to_string(DecayMode m);
DecayMode parse_decay_mode(std::string_view text);

struct TrainConfig {
  std::size_t batch_size = 40;
  /// Clips per forward/backward pass; 0 means the whole batch. Must divide
  /// batch_size. Gradients are the mean over micro-batches.
  std::size_t micro_batch_size = 0;
  double momentum = 0.9;
  double encoder_lr = 0.001;
  double decoder_lr = 0.1;
  double decay_factor = 10.0;
  DecayMode decay_mode = DecayMode::steps;
  /// Steps at which the decoder rate is divided by decay_factor (steps mode).
  std::vector<std::size_t> decay_steps{750, 950};
  /// Validations without improvement before a decay (patience mode).
  std::size_t patience = 5;
  /// Validate every this many steps; 0 disables validation.
  std::size_t validate_every = 25;
  std::size_t total_steps = 1000;
  std::size_t validation_samples = 2000;
  double loss_eps = 1e-7;
  std::uint64_t seed = 0;

  static constexpr std::size_t kDecayCount = 2;

  /// Throws ConfigError.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Loss.

/// KL(G || P) between per-map normalized ground truth and prediction, mean
/// over the batch. pred and gt are (B, ...) with equal shapes; each map is
/// normalized to sum 1 and 0 log 0 = 0.
double kl_loss(const Tensor& pred, const Tensor& gt, double eps = 1e-7);
/// d kl_loss / d pred.
Tensor kl_loss_backward(const Tensor& pred, const Tensor& gt, double eps = 1e-7);
Var kl_loss(Tape& tape, const Var& pred, const Tensor& gt, double eps = 1e-7);

// ---------------------------------------------------------------------------
// Optimizer and schedule.

/// Classic momentum SGD: v <- m v + g; w <- w - lr v. Velocities are keyed
/// by parameter name and created on first use. Weights and velocities are
/// kept at 32-bit precision so checkpoints restore the exact state.
/// Throws NumericError naming the first parameter with a non-finite gradient,
/// before any parameter is modified.
void sgd_step(const std::vector<Parameter*>& params, const std::function<double(const Parameter&)>& lr,
              double momentum, std::map<std::string, Tensor>& velocity);

/// Decoder learning rate in steps mode: decoder_lr / factor^k where k counts
/// decay steps <= step.
double lr_schedule(std::size_t step, const TrainConfig& config);

/// Decoder learning-rate state covering both decay modes.
class LrSchedule {
 public:
  struct State {
    std::size_t decays = 0;
    std::optional<double> best;  // best validation loss so far
    std::size_t stale = 0;       // validations since the last improvement
  };

  explicit LrSchedule(const TrainConfig& config) : config_(config) {}

  double decoder_lr(std::size_t step) const;
  /// Decays that have happened once `step` steps are complete (steps mode).
  std::size_t decays_at(std::size_t step) const;
  /// Patience-mode bookkeeping; returns true when this validation triggers a
  /// decay. In steps mode only tracks the best loss.
  bool on_validation(double loss);

  const State& state() const { return state_; }
  void set_state(const State& s) { state_ = s; }

 private:
  TrainConfig config_;
  State state_;
};

// ---------------------------------------------------------------------------
// Sampling and validation.

struct ClipOrigin {
  std::size_t video;
  std::size_t start;
  friend bool operator==(const ClipOrigin&, const ClipOrigin&) = default;
};

struct ClipBatch {
  Tensor clips;    // (B, 3, T, H, W)
  Tensor targets;  // (B, 1, H, W): density of the last frame of each clip
  std::vector<ClipOrigin> origins;
};

/// Number of (video, start) pairs. Videos shorter than T count as looped to
/// exactly T frames (one start).
std::size_t clip_count(const Dataset& dataset, std::size_t T);
ClipOrigin clip_origin(const Dataset& dataset, std::size_t T, std::size_t index);
ClipBatch make_batch(const Dataset& dataset, std::size_t T, const std::vector<ClipOrigin>& origins);

/// `count` clips drawn uniformly (with replacement) over all (video, start)
/// pairs. Throws std::invalid_argument for an empty dataset.
ClipBatch sample_clips(const Dataset& dataset, std::size_t T, std::size_t count, Rng& rng);

/// Mean eval-mode KL over `count` clips: all clips in order when count >=
/// clip_count, otherwise a uniform sample without replacement.
double validate(Network& net, const Dataset& dataset, std::size_t count, Rng& rng, double eps = 1e-7,
                std::size_t batch = 8);

// ---------------------------------------------------------------------------
// Trainer.

struct StepRecord {
  std::size_t step = 0;  // index of the update, starting at 0
  double loss = 0.0;
  double encoder_lr = 0.0;
  double decoder_lr = 0.0;
  std::optional<double> val_loss;
  /// The decoder rate decays before the next step.
  bool decayed = false;
};

class Trainer {
 public:
  /// `validation` may be null, which disables validation; patience mode
  /// then throws ConfigError.
  Trainer(Network& net, const Dataset& train, const Dataset* validation, TrainConfig config);

  StepRecord step();
  std::size_t current_step() const { return step_; }
  bool done() const { return step_ >= config_.total_steps; }
  const TrainConfig& config() const { return config_; }
  const LrSchedule& schedule() const { return schedule_; }
  double decoder_lr() const;

  /// Archive entries "optimizer.momentum.<param>" for every velocity.
  std::vector<NamedTensor> optimizer_state() const;

  /// Writes `path` (network + optimizer tensors) and `path`.json (step,
  /// optimizer state names, schedule state, sampler RNG state).
  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

 private:
  Network& net_;
  const Dataset& train_;
  const Dataset* validation_;
  TrainConfig config_;
  LrSchedule schedule_;
  Rng rng_;
  std::map<std::string, Tensor> velocity_;
  std::size_t step_ = 0;
};

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

}  // namespace tased
