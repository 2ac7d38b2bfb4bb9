#include "tased/layers.hpp"

#include <cmath>

#include <fmt/format.h>

#include "tased/error.hpp"

namespace tased {

namespace {

std::string extent_str(Extent3 e) { return fmt::format("{}x{}x{}", e.t, e.h, e.w); }

Shape with_extent(const Shape& in, std::size_t channels, Extent3 e) {
  return {in.at(0), channels, e.t, e.h, e.w};
}

void require_rank5(const Shape& in, const std::string& layer) {
  if (in.size() != 5) {
    throw ShapeError(fmt::format("{}: expected a rank-5 input, got {}", layer, shape_str(in)));
  }
}

}  // namespace

Tensor init_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  Tensor t(shape);
  for (double& v : t.data()) v = static_cast<double>(static_cast<float>(rng.uniform(-bound, bound)));
  return t;
}

BatchNormUnit::BatchNormUnit(const std::string& prefix, std::size_t channels)
    : gamma(prefix + ".gamma", Tensor::ones({channels})),
      beta(prefix + ".beta", Tensor::zeros({channels})),
      state(channels),
      prefix_(prefix),
      channels_(channels) {}

Var BatchNormUnit::apply(ForwardContext& ctx, const Var& x) {
  return batchnorm(ctx.tape, x, ctx.tape.parameter(gamma), ctx.tape.parameter(beta), state, ctx.mode);
}

void BatchNormUnit::collect(std::vector<Parameter*>& params, std::vector<NamedBuffer>& buffers) {
  params.push_back(&gamma);
  params.push_back(&beta);
  buffers.push_back({prefix_ + ".running_mean", &state.running_mean});
  buffers.push_back({prefix_ + ".running_var", &state.running_var});
}

// ---------------------------------------------------------------------------

ConvBlock::ConvBlock(std::string name, ConvSpec spec, bool norm_relu, Rng& rng)
    : Layer(std::move(name)), spec_(spec) {
  spec_.validate();
  weight_ = Parameter(this->name() + ".weight",
                      init_uniform(spec_.weight_shape(), spec_.in_channels * spec_.kernel.volume(), rng));
  if (spec_.bias) bias_.emplace(this->name() + ".bias", Tensor::zeros({spec_.out_channels}));
  if (norm_relu) bn_.emplace(this->name() + ".bn", spec_.out_channels);
}

std::string ConvBlock::kind() const {
  return fmt::format("conv {}{}", extent_str(spec_.kernel), bn_ ? "+bn+relu" : "");
}

Shape ConvBlock::output_shape(const Shape& in) const {
  require_rank5(in, name());
  return with_extent(in, spec_.out_channels, spec_.output_extent(spatial_extent(in)));
}

Var ConvBlock::forward(ForwardContext& ctx, const Var& x) {
  std::optional<Var> bias;
  if (bias_) bias = ctx.tape.parameter(*bias_);
  Var y = conv3d(ctx.tape, x, ctx.tape.parameter(weight_), bias, spec_);
  if (bn_) y = relu(ctx.tape, bn_->apply(ctx, y));
  return y;
}

std::size_t ConvBlock::macs(const Shape& in) const {
  return shape_numel(output_shape(in)) * spec_.in_channels * spec_.kernel.volume();
}

std::size_t ConvBlock::param_count() const {
  return spec_.out_channels * spec_.in_channels * spec_.kernel.volume() +
         (spec_.bias ? spec_.out_channels : 0) + (bn_ ? bn_->param_count() : 0);
}

void ConvBlock::collect(std::vector<Parameter*>& params, std::vector<NamedBuffer>& buffers) {
  params.push_back(&weight_);
  if (bias_) params.push_back(&*bias_);
  if (bn_) bn_->collect(params, buffers);
}

// ---------------------------------------------------------------------------

TransposedConvBlock::TransposedConvBlock(std::string name, ConvSpec spec, Rng& rng)
    : Layer(std::move(name)), spec_(spec), bn_(this->name() + ".bn", spec.out_channels) {
  spec_.validate();
  // Each output element receives in_channels * (kernel / stride) terms.
  const std::size_t taps = std::max<std::size_t>(spec_.kernel.volume() / spec_.stride.volume(), 1);
  weight_ = Parameter(this->name() + ".weight",
                      init_uniform(spec_.transposed_weight_shape(), spec_.in_channels * taps, rng));
}

std::string TransposedConvBlock::kind() const {
  return fmt::format("tconv {} /{}+bn+relu", extent_str(spec_.kernel), extent_str(spec_.stride));
}

Shape TransposedConvBlock::output_shape(const Shape& in) const {
  require_rank5(in, name());
  return with_extent(in, spec_.out_channels, spec_.transposed_output_extent(spatial_extent(in)));
}

Var TransposedConvBlock::forward(ForwardContext& ctx, const Var& x) {
  Var y = transposed_conv3d(ctx.tape, x, ctx.tape.parameter(weight_), std::nullopt, spec_);
  return relu(ctx.tape, bn_.apply(ctx, y));
}

std::size_t TransposedConvBlock::macs(const Shape& in) const {
  return shape_numel(in) * spec_.out_channels * spec_.kernel.volume();
}

std::size_t TransposedConvBlock::param_count() const {
  return spec_.in_channels * spec_.out_channels * spec_.kernel.volume() + bn_.param_count();
}

void TransposedConvBlock::collect(std::vector<Parameter*>& params, std::vector<NamedBuffer>& buffers) {
  params.push_back(&weight_);
  bn_.collect(params, buffers);
}

// ---------------------------------------------------------------------------

SeparableBlock::SeparableBlock(std::string name, SeparableConvSpec spec, Rng& rng)
    : Layer(std::move(name)),
      spec_(spec),
      spatial_bn_(this->name() + ".spatial_bn", spec.spatial.out_channels),
      temporal_bn_(this->name() + ".temporal_bn", spec.temporal.out_channels) {
  spec_.activation = true;
  spec_.validate();
  spatial_weight_ = Parameter(
      this->name() + ".spatial.weight",
      init_uniform(spec_.spatial.weight_shape(),
                   spec_.spatial.in_channels * spec_.spatial.kernel.volume(), rng));
  temporal_weight_ = Parameter(
      this->name() + ".temporal.weight",
      init_uniform(spec_.temporal.weight_shape(),
                   spec_.temporal.in_channels * spec_.temporal.kernel.volume(), rng));
}

std::string SeparableBlock::kind() const {
  return fmt::format("sepconv {}+{}", extent_str(spec_.spatial.kernel),
                     extent_str(spec_.temporal.kernel));
}

Shape SeparableBlock::output_shape(const Shape& in) const {
  require_rank5(in, name());
  const Extent3 mid = spec_.spatial.output_extent(spatial_extent(in));
  return with_extent(in, spec_.temporal.out_channels, spec_.temporal.output_extent(mid));
}

Var SeparableBlock::forward(ForwardContext& ctx, const Var& x) {
  SeparableWeights w;
  w.spatial = ctx.tape.parameter(spatial_weight_);
  w.temporal = ctx.tape.parameter(temporal_weight_);
  w.gamma = ctx.tape.parameter(spatial_bn_.gamma);
  w.beta = ctx.tape.parameter(spatial_bn_.beta);
  w.stats = &spatial_bn_.state;
  Var y = separable_conv3d(ctx.tape, x, w, spec_, ctx.mode);
  return relu(ctx.tape, temporal_bn_.apply(ctx, y));
}

std::size_t SeparableBlock::macs(const Shape& in) const {
  require_rank5(in, name());
  const Extent3 mid = spec_.spatial.output_extent(spatial_extent(in));
  const Shape mid_shape = with_extent(in, spec_.spatial.out_channels, mid);
  return shape_numel(mid_shape) * spec_.spatial.in_channels * spec_.spatial.kernel.volume() +
         shape_numel(output_shape(in)) * spec_.temporal.in_channels * spec_.temporal.kernel.volume();
}

std::size_t SeparableBlock::param_count() const {
  return spec_.spatial.out_channels * spec_.spatial.in_channels * spec_.spatial.kernel.volume() +
         spec_.temporal.out_channels * spec_.temporal.in_channels * spec_.temporal.kernel.volume() +
         spatial_bn_.param_count() + temporal_bn_.param_count();
}

void SeparableBlock::collect(std::vector<Parameter*>& params, std::vector<NamedBuffer>& buffers) {
  params.push_back(&spatial_weight_);
  spatial_bn_.collect(params, buffers);
  params.push_back(&temporal_weight_);
  temporal_bn_.collect(params, buffers);
}

// ---------------------------------------------------------------------------

std::string MaxPoolLayer::kind() const { return fmt::format("maxpool {}", extent_str(pool_.kernel)); }

Shape MaxPoolLayer::output_shape(const Shape& in) const {
  require_rank5(in, name());
  return with_extent(in, in[1], pool_.output_extent(spatial_extent(in)));
}

Var MaxPoolLayer::forward(ForwardContext& ctx, const Var& x) {
  return maxpool3d(ctx.tape, x, pool_).first;
}

// ---------------------------------------------------------------------------

UnpoolLayer::UnpoolLayer(std::string name, std::string tap, std::size_t temporal_factor,
                         std::size_t pool_h, std::size_t pool_w)
    : Layer(std::move(name)),
      source_tap_(std::move(tap)),
      temporal_factor_(temporal_factor),
      pool_h_(pool_h),
      pool_w_(pool_w) {}

std::string UnpoolLayer::kind() const {
  return fmt::format("maxunpool 1x{}x{} <- {} (aux pool {}x1x1)", pool_h_, pool_w_, source_tap_,
                     temporal_factor_);
}

Shape UnpoolLayer::output_shape(const Shape& in) const {
  require_rank5(in, name());
  return {in[0], in[1], in[2], in[3] * pool_h_, in[4] * pool_w_};
}

Var UnpoolLayer::forward(ForwardContext& ctx, const Var& x) {
  const auto it = ctx.taps.find(source_tap_);
  if (it == ctx.taps.end()) {
    throw std::logic_error(fmt::format("{}: encoder tap '{}' was not registered", name(), source_tap_));
  }
  Switches s = aux_pool_pair(it->second.value(), temporal_factor_, pool_h_, pool_w_);
  if (s.shape != x.shape()) {
    throw SwitchShapeError(fmt::format("{}: switches from '{}' have shape {} but the decoder feature is {}",
                                       name(), source_tap_, shape_str(s.shape), shape_str(x.shape())));
  }
  return maxunpool3d(ctx.tape, x, s);
}

// ---------------------------------------------------------------------------

std::string TrilinearLayer::kind() const { return fmt::format("trilinear x{}", extent_str(scale_)); }

Shape TrilinearLayer::output_shape(const Shape& in) const {
  require_rank5(in, name());
  return {in[0], in[1], in[2] * scale_.t, in[3] * scale_.h, in[4] * scale_.w};
}

Var TrilinearLayer::forward(ForwardContext& ctx, const Var& x) {
  return trilinear_upsample(ctx.tape, x, scale_);
}

std::size_t TrilinearLayer::macs(const Shape& in) const {
  // One lerp per axis per output element.
  return 3 * shape_numel(output_shape(in));
}

// ---------------------------------------------------------------------------

SaliencyHead::SaliencyHead(std::string name, std::size_t in_channels, Rng& rng) : Layer(std::move(name)) {
  spec_.in_channels = in_channels;
  spec_.out_channels = 1;
  spec_.bias = true;
  weight_ = Parameter(this->name() + ".weight", init_uniform(spec_.weight_shape(), in_channels, rng));
  bias_ = Parameter(this->name() + ".bias", Tensor::zeros({1}));
}

std::string SaliencyHead::kind() const { return "conv 1x1x1+bias+sigmoid"; }

Shape SaliencyHead::output_shape(const Shape& in) const {
  require_rank5(in, name());
  if (in[2] != 1) {
    throw ShapeError(fmt::format("{}: temporal length must be aggregated to 1 before the head, got {}",
                                 name(), shape_str(in)));
  }
  return {in[0], 1, in[3], in[4]};
}

Var SaliencyHead::forward(ForwardContext& ctx, const Var& x) {
  const Shape out = output_shape(x.shape());
  Var y = conv3d(ctx.tape, x, ctx.tape.parameter(weight_), ctx.tape.parameter(bias_), spec_);
  return reshape(ctx.tape, sigmoid(ctx.tape, y), out);
}

std::size_t SaliencyHead::macs(const Shape& in) const { return shape_numel(output_shape(in)) * spec_.in_channels; }

std::size_t SaliencyHead::param_count() const { return spec_.in_channels + 1; }

void SaliencyHead::collect(std::vector<Parameter*>& params, std::vector<NamedBuffer>& /*buffers*/) {
  params.push_back(&weight_);
  params.push_back(&bias_);
}

}  // namespace tased
