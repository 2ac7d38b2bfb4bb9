#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "tased/autograd.hpp"
#include "tased/tensor.hpp"

namespace tased {

/// A (time, height, width) triple: kernel sizes, strides, paddings, scales.
struct Extent3 {
  std::size_t t = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t volume() const { return t * h * w; }
  friend bool operator==(const Extent3&, const Extent3&) = default;
};

/// Geometry of a 3-D convolution over B x C x T x H x W tensors.
///
/// For conv3d the weight is (out, in, kT, kH, kW). For transposed_conv3d the
/// same spec describes the transposed layer (in_channels = channels of its
/// input) and the weight is (in, out, kT, kH, kW), i.e. exactly the weight of
/// the convolution it is the adjoint of.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  Extent3 kernel{1, 1, 1};
  Extent3 stride{1, 1, 1};
  Extent3 padding{0, 0, 0};
  bool bias = false;

  void validate() const;
  Shape weight_shape() const;
  Shape transposed_weight_shape() const;
  /// floor((in + 2p - k) / s) + 1 per axis; throws if any extent is < 1.
  Extent3 output_extent(Extent3 in) const;
  /// (in - 1) s - 2p + k per axis.
  Extent3 transposed_output_extent(Extent3 in) const;
};

/// Non-overlapping by default: stride defaults to the kernel.
struct PoolSpec {
  Extent3 kernel{1, 1, 1};
  Extent3 stride{0, 0, 0};

  Extent3 effective_stride() const;
  Extent3 output_extent(Extent3 in) const;
};

/// Argmax locations of a max-pooling: one flat index into `source_shape` per
/// pooled element.
struct Switches {
  Shape shape;
  Shape source_shape;
  std::vector<std::int64_t> index;
};

enum class Mode { train, eval };

Extent3 spatial_extent(const Shape& feature_shape);

// ---------------------------------------------------------------------------
// Kernels on plain tensors.

Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor* bias, const ConvSpec& spec);
Tensor conv3d_backward_input(const Tensor& grad_out, const Tensor& weight, const Shape& input_shape,
                             const ConvSpec& spec);
Tensor conv3d_backward_weight(const Tensor& x, const Tensor& grad_out, const ConvSpec& spec);
/// Per-channel sum of a B x C x ... gradient.
Tensor channel_sum(const Tensor& grad_out);

Tensor transposed_conv3d(const Tensor& x, const Tensor& weight, const Tensor* bias,
                         const ConvSpec& spec);

struct SeparableConvSpec {
  ConvSpec spatial;   // 1 x kH x kW
  ConvSpec temporal;  // kT x 1 x 1
  bool activation = true;

  void validate() const;
};

/// temporal(between(spatial(x))). `between` defaults to identity.
Tensor separable_conv3d(const Tensor& x, const Tensor& spatial_weight,
                        const Tensor& temporal_weight, const SeparableConvSpec& spec,
                        const std::function<Tensor(const Tensor&)>& between = {});

std::pair<Tensor, Switches> maxpool3d_with_switches(const Tensor& x, const PoolSpec& pool);
Tensor maxunpool3d(const Tensor& z, const Switches& switches);
/// Gathers grad_out at the switch locations (adjoint of maxunpool3d).
Tensor gather_switches(const Tensor& grad_out, const Switches& switches);

/// Auxiliary pooling pair: a temporal max-pool by `temporal_factor` followed
/// by a spatial 1 x aH x aW max-pool whose switches are returned. Both pooled
/// maps are discarded; the switches index the temporally reduced map so an
/// unpooling layer can scatter a decoder feature that has the reduced
/// temporal length.
Switches aux_pool_pair(const Tensor& encoder_feature, std::size_t temporal_factor,
                       std::size_t pool_h, std::size_t pool_w);

/// Per-channel running statistics, stored at 32-bit precision so they
/// round-trip exactly through weight archives.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-3;
  double momentum = 0.1;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels);
};

struct BatchNormForward {
  Tensor output;
  Tensor mean;     // statistics actually used for normalization
  Tensor inv_std;
};

/// Normalizes each channel over (B, T, H, W). Train mode uses batch
/// statistics and updates the running ones (new = (1-m) old + m batch, with
/// the unbiased batch variance); eval mode uses the running statistics.
BatchNormForward batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           BatchNormState& state, Mode mode);

struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};

BatchNormGrads batchnorm_backward(const Tensor& grad_out, const Tensor& x, const Tensor& gamma,
                                  const BatchNormForward& forward, Mode mode);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Align-corners linear interpolation along T, H and W with integer scales:
/// output sample i of an axis of length n sits at i (n - 1) / (s n - 1).
Tensor trilinear_upsample(const Tensor& x, Extent3 scale);
Tensor trilinear_upsample_backward(const Tensor& grad_out, const Shape& input_shape, Extent3 scale);

// ---------------------------------------------------------------------------
// Taped versions: forward kernels plus their backward.

Var conv3d(Tape& tape, const Var& x, const Var& weight, const std::optional<Var>& bias,
           const ConvSpec& spec);
Var transposed_conv3d(Tape& tape, const Var& x, const Var& weight, const std::optional<Var>& bias,
                      const ConvSpec& spec);

/// Intermediate batch-norm + ReLU between the factors, used when
/// spec.activation is set.
struct SeparableWeights {
  Var spatial;
  Var temporal;
  Var gamma;
  Var beta;
  BatchNormState* stats = nullptr;
};

Var separable_conv3d(Tape& tape, const Var& x, const SeparableWeights& weights,
                     const SeparableConvSpec& spec, Mode mode);

std::pair<Var, Switches> maxpool3d(Tape& tape, const Var& x, const PoolSpec& pool);
Var maxunpool3d(Tape& tape, const Var& z, const Switches& switches);
Var batchnorm(Tape& tape, const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
              Mode mode);
Var relu(Tape& tape, const Var& x);
Var sigmoid(Tape& tape, const Var& x);
Var trilinear_upsample(Tape& tape, const Var& x, Extent3 scale);
Var reshape(Tape& tape, const Var& x, Shape shape);

}  // namespace tased
