#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tased/autograd.hpp"
#include "tased/error.hpp"
#include "tased/ops.hpp"
#include "tased/rng.hpp"

namespace tased {

/// Non-trainable state that persists with the weights (batch-norm running
/// statistics).
struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

struct ForwardContext {
  Tape& tape;
  Mode mode;
  /// Encoder features registered for auxiliary pooling, keyed by tap name.
  std::map<std::string, Var> taps;
};

class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const std::string& name() const { return name_; }
  virtual std::string kind() const = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual Var forward(ForwardContext& ctx, const Var& x) = 0;

  /// Multiply-accumulates for one forward pass on an input of this shape.
  virtual std::size_t macs(const Shape& /*in*/) const { return 0; }
  /// Parameter count from the layer geometry (not from enumeration).
  virtual std::size_t param_count() const { return 0; }
  virtual void collect(std::vector<Parameter*>& /*params*/, std::vector<NamedBuffer>& /*buffers*/) {}

  /// When set, the layer's output is registered in ForwardContext::taps.
  void set_tap(std::string tap) { tap_ = std::move(tap); }
  const std::optional<std::string>& tap() const { return tap_; }

 private:
  std::string name_;
  std::optional<std::string> tap_;
};

/// Batch-norm affine parameters plus running statistics.
class BatchNormUnit {
 public:
  BatchNormUnit(const std::string& prefix, std::size_t channels);
  Var apply(ForwardContext& ctx, const Var& x);
  void collect(std::vector<Parameter*>& params, std::vector<NamedBuffer>& buffers);
  std::size_t param_count() const { return 2 * channels_; }

  Parameter gamma;
  Parameter beta;
  BatchNormState state;

 private:
  std::string prefix_;
  std::size_t channels_;
};

/// Convolution, optionally followed by batch-norm and ReLU.
class ConvBlock : public Layer {
 public:
  ConvBlock(std::string name, ConvSpec spec, bool norm_relu, Rng& rng);
  std::string kind() const override;
  Shape output_shape(const Shape& in) const override;
  Var forward(ForwardContext& ctx, const Var& x) override;
  std::size_t macs(const Shape& in) const override;
  std::size_t param_count() const override;
  void collect(std::vector<Parameter*>& params, std::vector<NamedBuffer>& buffers) override;
  const ConvSpec& spec() const { return spec_; }

 private:
  ConvSpec spec_;
  Parameter weight_;
  std::optional<Parameter> bias_;
  std::optional<BatchNormUnit> bn_;
};

/// Transposed convolution followed by batch-norm and ReLU.
class TransposedConvBlock : public Layer {
 public:
  TransposedConvBlock(std::string name, ConvSpec spec, Rng& rng);
  std::string kind() const override;
  Shape output_shape(const Shape& in) const override;
  Var forward(ForwardContext& ctx, const Var& x) override;
  std::size_t macs(const Shape& in) const override;
  std::size_t param_count() const override;
  void collect(std::vector<Parameter*>& params, std::vector<NamedBuffer>& buffers) override;

 private:
  ConvSpec spec_;
  Parameter weight_;
  BatchNormUnit bn_;
};

/// Factorized spatiotemporal convolution: 1 x k x k spatial conv, BN, ReLU,
/// k x 1 x 1 temporal conv, BN, ReLU.
class SeparableBlock : public Layer {
 public:
  SeparableBlock(std::string name, SeparableConvSpec spec, Rng& rng);
  std::string kind() const override;
  Shape output_shape(const Shape& in) const override;
  Var forward(ForwardContext& ctx, const Var& x) override;
  std::size_t macs(const Shape& in) const override;
  std::size_t param_count() const override;
  void collect(std::vector<Parameter*>& params, std::vector<NamedBuffer>& buffers) override;

 private:
  SeparableConvSpec spec_;
  Parameter spatial_weight_;
  BatchNormUnit spatial_bn_;
  Parameter temporal_weight_;
  BatchNormUnit temporal_bn_;
};

class MaxPoolLayer : public Layer {
 public:
  MaxPoolLayer(std::string name, PoolSpec pool) : Layer(std::move(name)), pool_(pool) {}
  std::string kind() const override;
  Shape output_shape(const Shape& in) const override;
  Var forward(ForwardContext& ctx, const Var& x) override;

 private:
  PoolSpec pool_;
};

/// Thrown when an unpooling layer receives switches whose shape differs from
/// its input: the failure auxiliary pooling exists to prevent.
class SwitchShapeError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

/// Spatial max-unpooling fed by an auxiliary pooling pair over an encoder tap.
class UnpoolLayer : public Layer {
 public:
  UnpoolLayer(std::string name, std::string tap, std::size_t temporal_factor, std::size_t pool_h,
              std::size_t pool_w);
  std::string kind() const override;
  Shape output_shape(const Shape& in) const override;
  Var forward(ForwardContext& ctx, const Var& x) override;

  const std::string& source_tap() const { return source_tap_; }
  std::size_t temporal_factor() const { return temporal_factor_; }

 private:
  std::string source_tap_;
  std::size_t temporal_factor_;
  std::size_t pool_h_;
  std::size_t pool_w_;
};

class TrilinearLayer : public Layer {
 public:
  TrilinearLayer(std::string name, Extent3 scale) : Layer(std::move(name)), scale_(scale) {}
  std::string kind() const override;
  Shape output_shape(const Shape& in) const override;
  Var forward(ForwardContext& ctx, const Var& x) override;
  std::size_t macs(const Shape& in) const override;

 private:
  Extent3 scale_;
};

/// Final 1x1x1 convolution with bias (no batch-norm), sigmoid, and removal of
/// the unit temporal axis: (B, C, 1, H, W) -> (B, 1, H, W).
class SaliencyHead : public Layer {
 public:
  SaliencyHead(std::string name, std::size_t in_channels, Rng& rng);
  std::string kind() const override;
  Shape output_shape(const Shape& in) const override;
  Var forward(ForwardContext& ctx, const Var& x) override;
  std::size_t macs(const Shape& in) const override;
  std::size_t param_count() const override;
  void collect(std::vector<Parameter*>& params, std::vector<NamedBuffer>& buffers) override;

 private:
  ConvSpec spec_;
  Parameter weight_;
  Parameter bias_;
};

/// Fan-in scaled uniform init, U(-sqrt(6 / fan_in), +sqrt(6 / fan_in)),
/// rounded to 32-bit precision.
Tensor init_uniform(const Shape& shape, std::size_t fan_in, Rng& rng);

}  // namespace tased
