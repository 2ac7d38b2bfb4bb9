#include "tased/model.hpp"

#include <algorithm>
#include <sstream>

#include <fmt/format.h>

#include "tased/error.hpp"
#include "tased/rng.hpp"

namespace tased {

std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::late:
      return "late";
    case Aggregation::early_two_step:
      return "early_two_step";
    case Aggregation::late_two_step:
      return "late_two_step";
  }
  return "?";
}

std::string to_string(Upsampling u) {
  switch (u) {
    case Upsampling::unpool:
      return "unpool";
    case Upsampling::trilinear:
      return "trilinear";
    case Upsampling::transposed:
      return "transposed";
  }
  return "?";
}

Aggregation parse_aggregation(std::string_view text) {
  if (text == "late") return Aggregation::late;
  if (text == "early_two_step" || text == "early-two-step") return Aggregation::early_two_step;
  if (text == "late_two_step" || text == "late-two-step") return Aggregation::late_two_step;
  throw ConfigError(fmt::format(
      "unknown aggregation '{}' (expected late, early_two_step or late_two_step)", text));
}

Upsampling parse_upsampling(std::string_view text) {
  if (text == "unpool") return Upsampling::unpool;
  if (text == "trilinear" || text == "tri") return Upsampling::trilinear;
  if (text == "transposed" || text == "trp") return Upsampling::transposed;
  throw ConfigError(fmt::format("unknown upsampling '{}' (expected unpool, trilinear or transposed)", text));
}

std::size_t ModelConfig::encoder_temporal_factor() const {
  return clip_length >= 16 ? temporal_downsample : clip_length / 2;
}

void ModelConfig::validate() const {
  const std::size_t T = clip_length;
  if (!(T == 4 || T == 8 || (T >= 16 && T % 16 == 0))) {
    throw ConfigError(fmt::format(
        "clip_length T={} unsupported: need T % 16 == 0 with T >= 16, or T in {{4, 8}}", T));
  }
  if (spatial_downsample != 32) {
    throw ConfigError(fmt::format("spatial_downsample={} unsupported: the encoder reduces H and W by 32",
                                  spatial_downsample));
  }
  if (temporal_downsample != 8) {
    throw ConfigError(fmt::format("temporal_downsample={} unsupported: the encoder reduces T by 8",
                                  temporal_downsample));
  }
  if (height == 0 || height % 32 != 0) {
    throw ConfigError(fmt::format("height H={} violates H % 32 == 0 (H={} mod 32 = {})", height, height,
                                  height % 32));
  }
  if (width == 0 || width % 32 != 0) {
    throw ConfigError(fmt::format("width W={} violates W % 32 == 0 (W={} mod 32 = {})", width, width,
                                  width % 32));
  }
  if (encoder_channels.size() != 4) {
    throw ConfigError(fmt::format("encoder_channels needs 4 entries, got {}", encoder_channels.size()));
  }
  for (std::size_t c : encoder_channels) {
    if (c == 0) throw ConfigError("encoder_channels entries must be >= 1");
  }
  if (unpool_layers < 1 || unpool_layers > 2) {
    throw ConfigError(fmt::format("unpool_layers={} unsupported: expected 1 or 2", unpool_layers));
  }
  const std::size_t factor = encoder_temporal_factor();
  if (T % factor != 0) {
    throw ConfigError(fmt::format("encoder temporal factor {} does not divide T={}", factor, T));
  }
  aggregation_plan(*this);
}

ModelConfig ModelConfig::tiny(std::size_t clip_length, std::size_t height, std::size_t width) {
  ModelConfig c;
  c.clip_length = clip_length;
  c.height = height;
  c.width = width;
  c.encoder_channels = {2, 4, 8, 16};
  return c;
}

ModelConfig ModelConfig::paperlike(std::size_t clip_length) {
  ModelConfig c;
  c.clip_length = clip_length;
  c.encoder_channels = {64, 192, 480, 832};
  return c;
}

std::vector<AggregationStep> aggregation_plan(const ModelConfig& config) {
  const std::size_t te = config.encoded_length();
  using K = AggregationStep::Kind;
  std::vector<AggregationStep> plan;
  switch (config.aggregation) {
    case Aggregation::late:
      plan = {{K::upsample, 1}, {K::upsample, 1}, {K::temporal_conv, te}};
      break;
    case Aggregation::early_two_step:
      plan = {{K::temporal_conv, 2}, {K::upsample, 1}, {K::temporal_conv, te / 2}, {K::upsample, 1}};
      break;
    case Aggregation::late_two_step:
      plan = {{K::upsample, 1}, {K::temporal_conv, 2}, {K::upsample, 1}, {K::temporal_conv, te / 2}};
      break;
  }
  std::size_t length = te;
  for (const AggregationStep& step : plan) {
    if (step.kind != K::temporal_conv) continue;
    if (step.factor == 0 || length % step.factor != 0) {
      throw ConfigError(fmt::format(
          "{} aggregation: temporal factor {} does not divide running length {} (T={}, T/{}={})",
          to_string(config.aggregation), step.factor, length, config.clip_length,
          config.encoder_temporal_factor(), te));
    }
    length /= step.factor;
  }
  if (length != 1) {
    throw ConfigError(fmt::format(
        "{} aggregation leaves temporal length {} (need encoder factor x decoder factors == T={})",
        to_string(config.aggregation), length, config.clip_length));
  }
  return plan;
}

ParamGroup param_group(std::string_view name) {
  return name.starts_with("encoder.") ? ParamGroup::encoder : ParamGroup::decoder;
}

namespace {

ConvSpec spatial3(std::size_t cin, std::size_t cout, std::size_t stride = 1) {
  ConvSpec s;
  s.in_channels = cin;
  s.out_channels = cout;
  s.kernel = {1, 3, 3};
  s.stride = {1, stride, stride};
  s.padding = {0, 1, 1};
  return s;
}

SeparableConvSpec separable(std::size_t cin, std::size_t cout, std::size_t spatial_stride,
                            std::size_t temporal_stride) {
  SeparableConvSpec s;
  s.spatial = spatial3(cin, cout, spatial_stride);
  s.temporal.in_channels = cout;
  s.temporal.out_channels = cout;
  s.temporal.kernel = {3, 1, 1};
  s.temporal.stride = {temporal_stride, 1, 1};
  s.temporal.padding = {1, 0, 0};
  return s;
}

ConvSpec upscale2(std::size_t cin, std::size_t cout) {
  ConvSpec s;
  s.in_channels = cin;
  s.out_channels = cout;
  s.kernel = {1, 4, 4};
  s.stride = {1, 2, 2};
  s.padding = {0, 1, 1};
  return s;
}

PoolSpec pool(std::size_t t, std::size_t h, std::size_t w) {
  PoolSpec p;
  p.kernel = {t, h, w};
  return p;
}

}  // namespace

Network::Network(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.seed);
  const auto& c = config_.encoder_channels;
  const std::size_t factor = config_.encoder_temporal_factor();
  const std::size_t T = config_.clip_length;

  auto add = [&](std::unique_ptr<Layer> layer) -> Layer& {
    layers_.push_back(std::move(layer));
    return *layers_.back();
  };

  // Encoder: (3, T, H, W) -> (c3, T / factor, H / 32, W / 32).
  add(std::make_unique<SeparableBlock>("encoder.stem", separable(3, c[0], 2, 2), rng));
  add(std::make_unique<MaxPoolLayer>("encoder.pool1", pool(1, 2, 2)));
  add(std::make_unique<SeparableBlock>("encoder.block1", separable(c[0], c[1], 1, 1), rng))
      .set_tap("tap_a");
  add(std::make_unique<MaxPoolLayer>("encoder.pool2", pool(factor >= 4 ? 2 : 1, 2, 2)));
  add(std::make_unique<SeparableBlock>("encoder.block2", separable(c[1], c[2], 1, 1), rng))
      .set_tap("tap_b");
  add(std::make_unique<MaxPoolLayer>("encoder.pool3", pool(factor >= 8 ? 2 : 1, 2, 2)));
  add(std::make_unique<SeparableBlock>("encoder.block3", separable(c[2], c[3], 1, 1), rng));
  add(std::make_unique<MaxPoolLayer>("encoder.pool4", pool(1, 2, 2)));

  const std::size_t te = T / factor;
  const std::size_t tap_a_length = T / 2;
  const std::size_t tap_b_length = T / std::min<std::size_t>(factor, 4);

  ConvSpec redistribute;
  redistribute.in_channels = c[3];
  redistribute.out_channels = c[3];
  add(std::make_unique<ConvBlock>("decoder.redistribute", redistribute, true, rng));
  add(std::make_unique<TransposedConvBlock>("decoder.up0", upscale2(c[3], c[2]), rng));

  auto add_switch_upsample = [&](const std::string& name, std::size_t channels, const std::string& tap,
                                 const std::string& tap_layer, std::size_t tap_length, bool allow_unpool) {
    switch (config_.upsampling) {
      case Upsampling::unpool:
        if (allow_unpool) {
          add(std::make_unique<UnpoolLayer>(name, tap, tap_length / te, 2, 2));
          attachments_.push_back({name, tap, tap_layer, tap_length / te, Extent3{1, 2, 2}});
        } else {
          add(std::make_unique<TransposedConvBlock>(name, upscale2(channels, channels), rng));
        }
        break;
      case Upsampling::trilinear:
        add(std::make_unique<TrilinearLayer>(name, Extent3{1, 2, 2}));
        break;
      case Upsampling::transposed: {
        ConvSpec s;
        s.in_channels = channels;
        s.out_channels = channels;
        s.kernel = {1, 2, 2};
        s.stride = {1, 2, 2};
        add(std::make_unique<TransposedConvBlock>(name, s, rng));
        break;
      }
    }
  };

  // Stage A: back to quarter resolution.
  add_switch_upsample("decoder.up1", c[2], "tap_b", "encoder.block2", tap_b_length, true);
  add(std::make_unique<ConvBlock>("decoder.conv1", spatial3(c[2], c[1]), true, rng));
  add_switch_upsample("decoder.up2", c[1], "tap_a", "encoder.block1", tap_a_length,
                      config_.unpool_layers >= 2);
  add(std::make_unique<ConvBlock>("decoder.conv2", spatial3(c[1], c[0]), true, rng));

  // Stage B: temporal aggregation interleaved with the last two upscales.
  std::size_t channels = c[0];
  std::size_t index = 0;
  for (const AggregationStep& step : aggregation_plan(config_)) {
    const std::string name = fmt::format("decoder.agg{}", index++);
    if (step.kind == AggregationStep::Kind::upsample) {
      // Halving stops at two channels: a single batch-normalized ReLU channel
      // can die and freeze the whole map.
      const std::size_t next = std::max<std::size_t>(channels / 2, std::min<std::size_t>(channels, 2));
      add(std::make_unique<TransposedConvBlock>(name, upscale2(channels, next), rng));
      channels = next;
    } else {
      ConvSpec s;
      s.in_channels = channels;
      s.out_channels = channels;
      s.kernel = {step.factor, 1, 1};
      s.stride = {step.factor, 1, 1};
      add(std::make_unique<ConvBlock>(name, s, true, rng));
    }
  }
  add(std::make_unique<SaliencyHead>("decoder.head", channels, rng));
}

Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;
Network::~Network() = default;

void Network::check_input(const Shape& shape) const {
  const Shape expected{shape.empty() ? 0 : shape[0], 3, config_.clip_length, config_.height, config_.width};
  if (shape.size() != 5 || shape != expected || shape[0] == 0) {
    throw ShapeError(fmt::format("network input must be (B, 3, {}, {}, {}), got {}", config_.clip_length,
                                 config_.height, config_.width, shape_str(shape)));
  }
}

Var Network::forward(Tape& tape, const Var& clip, Mode mode) {
  check_input(clip.shape());
  ForwardContext ctx{tape, mode, {}};
  Var x = clip;
  for (auto& layer : layers_) {
    x = layer->forward(ctx, x);
    if (layer->tap()) ctx.taps[*layer->tap()] = x;
  }
  return x;
}

Tensor Network::predict(const Tensor& clip) {
  Tape tape(false);
  return forward(tape, tape.constant(clip), Mode::eval).value();
}

std::vector<Parameter*> Network::parameters() {
  std::vector<Parameter*> params;
  std::vector<NamedBuffer> buffers;
  for (auto& layer : layers_) layer->collect(params, buffers);
  return params;
}

std::vector<NamedBuffer> Network::buffers() {
  std::vector<Parameter*> params;
  std::vector<NamedBuffer> buffers;
  for (auto& layer : layers_) layer->collect(params, buffers);
  return buffers;
}

void Network::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

ModelSummary Network::summary(std::size_t batch) {
  ModelSummary s;
  s.input_shape = {batch, 3, config_.clip_length, config_.height, config_.width};
  Shape shape = s.input_shape;
  for (auto& layer : layers_) {
    LayerSummary row;
    row.name = layer->name();
    row.kind = layer->kind();
    row.group = param_group(layer->name());
    row.output_shape = layer->output_shape(shape);
    row.params = layer->param_count();
    std::vector<Parameter*> params;
    std::vector<NamedBuffer> buffers;
    layer->collect(params, buffers);
    row.enumerated = 0;
    for (const Parameter* p : params) row.enumerated += p->value.numel();
    row.macs = layer->macs(shape);
    s.total_params += row.params;
    s.total_enumerated += row.enumerated;
    s.total_macs += row.macs;
    shape = row.output_shape;
    s.layers.push_back(std::move(row));
  }
  return s;
}

Network build(const ModelConfig& config) { return Network(config); }

std::string format_summary(const ModelSummary& summary) {
  std::ostringstream out;
  out << fmt::format("input {}\n", shape_str(summary.input_shape));
  out << fmt::format("{:<22} {:<44} {:<22} {:>10} {:>14}\n", "layer", "kind", "output", "params", "MACs");
  for (const LayerSummary& row : summary.layers) {
    out << fmt::format("{:<22} {:<44} {:<22} {:>10} {:>14}\n", row.name, row.kind,
                       shape_str(row.output_shape), row.params, row.macs);
  }
  out << fmt::format("total params {} (enumerated {}), MACs {} ({:.3f} G)\n", summary.total_params,
                     summary.total_enumerated, summary.total_macs,
                     static_cast<double>(summary.total_macs) / 1e9);
  return out.str();
}

}  // namespace tased
