#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "tased/autograd.hpp"
#include "tased/layers.hpp"
#include "tased/ops.hpp"

namespace tased {

/// Where the decoder's temporal convolutions sit relative to its spatial
/// upsampling after the quarter-resolution point.
enum class Aggregation { late, early_two_step, late_two_step };

/// How the two switch-fed upsampling layers of the decoder are realized.
enum class Upsampling { unpool, trilinear, transposed };

std::string to_string(Aggregation a);
std::string to_string(Upsampling u);
/// Accepts "late", "early_two_step"/"early-two-step", "late_two_step"/"late-two-step".
Aggregation parse_aggregation(std::string_view text);
/// Accepts "unpool", "trilinear"/"tri", "transposed"/"trp".
Upsampling parse_upsampling(std::string_view text);

struct ModelConfig {
  std::size_t clip_length = 32;  // T
  std::size_t height = 224;
  std::size_t width = 384;
  std::vector<std::size_t> encoder_channels{16, 32, 64, 128};
  std::size_t spatial_downsample = 32;
  /// Encoder temporal reduction for T >= 16. Clips of 4 or 8 frames use a
  /// reduced-depth encoder that stops at two temporal steps (factor T / 2).
  std::size_t temporal_downsample = 8;
  Aggregation aggregation = Aggregation::late_two_step;
  Upsampling upsampling = Upsampling::unpool;
  /// Number of switch-fed unpooling layers (1 or 2) in unpool mode. With 1,
  /// the quarter-resolution upscale is a transposed convolution instead.
  std::size_t unpool_layers = 2;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the violated divisibility constraint.
  void validate() const;

  /// Temporal length at the encoder output.
  std::size_t encoder_temporal_factor() const;
  std::size_t encoded_length() const { return clip_length / encoder_temporal_factor(); }

  /// Channels [2, 4, 8, 16], used for gradient checks and toy training.
  static ModelConfig tiny(std::size_t clip_length = 16, std::size_t height = 32, std::size_t width = 64);
  /// Inception-scale widths approximating the full-size network.
  static ModelConfig paperlike(std::size_t clip_length = 32);
};

struct AggregationStep {
  enum class Kind { upsample, temporal_conv };
  Kind kind;
  /// Temporal reduction for temporal_conv (kernel = stride = factor), 1 for
  /// spatial x2 upsampling.
  std::size_t factor;

  friend bool operator==(const AggregationStep&, const AggregationStep&) = default;
};

/// Decoder stage B after the quarter-resolution point. The product of the
/// temporal factors equals the encoded length.
std::vector<AggregationStep> aggregation_plan(const ModelConfig& config);

/// Pairs a max-unpooling layer with the encoder feature whose auxiliary
/// pooling supplies its switches.
struct AuxPoolAttachment {
  std::string unpool_layer;
  std::string tap;
  std::string tap_layer;
  std::size_t temporal_factor;
  Extent3 spatial_kernel;
};

enum class ParamGroup { encoder, decoder };

/// Parameters named "encoder.*" belong to the encoder; all others
/// (including the 1x1x1 redistribution conv) to the prediction network.
ParamGroup param_group(std::string_view parameter_name);

struct LayerSummary {
  std::string name;
  std::string kind;
  ParamGroup group;
  Shape output_shape;
  std::size_t params;      // closed form from the layer geometry
  std::size_t enumerated;  // sum of the layer's Parameter element counts
  std::size_t macs;
};

struct ModelSummary {
  Shape input_shape;
  std::vector<LayerSummary> layers;
  std::size_t total_params = 0;
  std::size_t total_enumerated = 0;
  std::size_t total_macs = 0;
};

class Network {
 public:
  explicit Network(ModelConfig config);
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;
  ~Network();

  const ModelConfig& config() const { return config_; }

  /// clip (B, 3, T, H, W) -> saliency (B, 1, H, W) in (0, 1).
  Var forward(Tape& tape, const Var& clip, Mode mode);
  /// Eval-mode forward without gradient bookkeeping.
  Tensor predict(const Tensor& clip);

  std::vector<Parameter*> parameters();
  std::vector<NamedBuffer> buffers();
  void zero_grad();

  const std::vector<AuxPoolAttachment>& attachments() const { return attachments_; }
  std::size_t layer_count() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  ModelSummary summary(std::size_t batch = 1);

 private:
  void check_input(const Shape& shape) const;

  ModelConfig config_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<AuxPoolAttachment> attachments_;
};

/// Validates the config and builds a network whose weights are a
/// deterministic function of config.seed.
Network build(const ModelConfig& config);

std::string format_summary(const ModelSummary& summary);

}  // namespace tased
