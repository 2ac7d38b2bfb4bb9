#include <algorithm>
#include <cstddef>
#include <vector>

#include <fmt/format.h>

#include "tased/error.hpp"
#include "tased/ops.hpp"

namespace tased {

namespace {

using Index = std::ptrdiff_t;

Index floor_div(Index a, Index b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// Output positions [lo, hi) whose input position o*s - p + k lands inside
// [0, in), precomputed for every kernel offset k along one axis.
struct AxisRanges {
  std::vector<Index> lo;
  std::vector<Index> hi;
};

AxisRanges axis_ranges(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                       std::size_t pad) {
  AxisRanges r;
  r.lo.resize(kernel);
  r.hi.resize(kernel);
  const Index s = static_cast<Index>(stride);
  for (std::size_t k = 0; k < kernel; ++k) {
    const Index shift = static_cast<Index>(pad) - static_cast<Index>(k);
    Index lo = shift > 0 ? (shift + s - 1) / s : 0;
    Index hi = floor_div(static_cast<Index>(in) - 1 + shift, s) + 1;
    lo = std::max<Index>(lo, 0);
    hi = std::min<Index>(hi, static_cast<Index>(out));
    r.lo[k] = lo;
    r.hi[k] = std::max(hi, lo);
  }
  return r;
}

struct Geometry {
  std::size_t batch = 0;
  std::size_t cin = 0;
  std::size_t cout = 0;
  Extent3 in;
  Extent3 out;
  std::size_t in_volume = 0;
  std::size_t out_volume = 0;
  AxisRanges rt, rh, rw;
};

Geometry make_geometry(const Shape& input_shape, const ConvSpec& spec) {
  if (input_shape.size() != 5) {
    throw ShapeError(fmt::format("conv3d expects a rank-5 input, got {}", shape_str(input_shape)));
  }
  if (input_shape[1] != spec.in_channels) {
    throw ShapeError(fmt::format("conv3d: input {} has {} channels, spec expects {}",
                                 shape_str(input_shape), input_shape[1], spec.in_channels));
  }
  Geometry g;
  g.batch = input_shape[0];
  g.cin = spec.in_channels;
  g.cout = spec.out_channels;
  g.in = spatial_extent(input_shape);
  g.out = spec.output_extent(g.in);
  g.in_volume = g.in.volume();
  g.out_volume = g.out.volume();
  g.rt = axis_ranges(g.in.t, g.out.t, spec.kernel.t, spec.stride.t, spec.padding.t);
  g.rh = axis_ranges(g.in.h, g.out.h, spec.kernel.h, spec.stride.h, spec.padding.h);
  g.rw = axis_ranges(g.in.w, g.out.w, spec.kernel.w, spec.stride.w, spec.padding.w);
  return g;
}

void require_weight(const Tensor& weight, const Shape& expected, const char* what) {
  if (weight.shape() != expected) {
    throw ShapeError(fmt::format("{}: weight shape {} does not match expected {}", what,
                                 shape_str(weight.shape()), shape_str(expected)));
  }
}

// Visits every (kernel offset, output row) pair of one input/output plane
// pair. `fn(weight_offset, out_row, in_row, count)` receives the row
// offsets of the first valid output column and the matching input column.
template <typename Fn>
void for_each_tap(const Geometry& g, const ConvSpec& spec, Fn&& fn) {
  const Index st = static_cast<Index>(spec.stride.t);
  const Index sh = static_cast<Index>(spec.stride.h);
  const Index sw = static_cast<Index>(spec.stride.w);
  const Index pt = static_cast<Index>(spec.padding.t);
  const Index ph = static_cast<Index>(spec.padding.h);
  const Index pw = static_cast<Index>(spec.padding.w);
  const Index Hi = static_cast<Index>(g.in.h), Wi = static_cast<Index>(g.in.w);
  const Index Ho = static_cast<Index>(g.out.h), Wo = static_cast<Index>(g.out.w);
  std::size_t woff = 0;
  for (std::size_t kt = 0; kt < spec.kernel.t; ++kt) {
    for (std::size_t kh = 0; kh < spec.kernel.h; ++kh) {
      for (std::size_t kw = 0; kw < spec.kernel.w; ++kw, ++woff) {
        const Index wlo = g.rw.lo[kw], whi = g.rw.hi[kw];
        if (wlo >= whi) continue;
        const Index wi0 = wlo * sw - pw + static_cast<Index>(kw);
        for (Index to = g.rt.lo[kt]; to < g.rt.hi[kt]; ++to) {
          const Index ti = to * st - pt + static_cast<Index>(kt);
          for (Index ho = g.rh.lo[kh]; ho < g.rh.hi[kh]; ++ho) {
            const Index hi = ho * sh - ph + static_cast<Index>(kh);
            fn(woff, (to * Ho + ho) * Wo + wlo, (ti * Hi + hi) * Wi + wi0, whi - wlo);
          }
        }
      }
    }
  }
}

}  // namespace

Extent3 spatial_extent(const Shape& s) {
  if (s.size() != 5) throw ShapeError(fmt::format("expected a rank-5 feature map, got {}", shape_str(s)));
  return {s[2], s[3], s[4]};
}

void ConvSpec::validate() const {
  if (in_channels == 0 || out_channels == 0) throw ShapeError("conv spec: channel counts must be >= 1");
  if (kernel.t == 0 || kernel.h == 0 || kernel.w == 0) throw ShapeError("conv spec: kernel entries must be >= 1");
  if (stride.t == 0 || stride.h == 0 || stride.w == 0) throw ShapeError("conv spec: stride entries must be >= 1");
}

Shape ConvSpec::weight_shape() const {
  return {out_channels, in_channels, kernel.t, kernel.h, kernel.w};
}

Shape ConvSpec::transposed_weight_shape() const {
  return {in_channels, out_channels, kernel.t, kernel.h, kernel.w};
}

Extent3 ConvSpec::output_extent(Extent3 in) const {
  validate();
  auto axis = [](std::size_t n, std::size_t k, std::size_t s, std::size_t p, const char* name) {
    const Index span = static_cast<Index>(n + 2 * p) - static_cast<Index>(k);
    if (span < 0) {
      throw ShapeError(fmt::format("conv: {} extent {} with padding {} is smaller than kernel {}",
                                   name, n, p, k));
    }
    return static_cast<std::size_t>(span) / s + 1;
  };
  return {axis(in.t, kernel.t, stride.t, padding.t, "temporal"),
          axis(in.h, kernel.h, stride.h, padding.h, "height"),
          axis(in.w, kernel.w, stride.w, padding.w, "width")};
}

Extent3 ConvSpec::transposed_output_extent(Extent3 in) const {
  validate();
  auto axis = [](std::size_t n, std::size_t k, std::size_t s, std::size_t p, const char* name) {
    const Index size = static_cast<Index>((n - 1) * s + k) - static_cast<Index>(2 * p);
    if (size < 1) {
      throw ShapeError(fmt::format("transposed conv: {} output extent would be {}", name, size));
    }
    return static_cast<std::size_t>(size);
  };
  return {axis(in.t, kernel.t, stride.t, padding.t, "temporal"),
          axis(in.h, kernel.h, stride.h, padding.h, "height"),
          axis(in.w, kernel.w, stride.w, padding.w, "width")};
}

Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor* bias, const ConvSpec& spec) {
  const Geometry g = make_geometry(x.shape(), spec);
  require_weight(weight, spec.weight_shape(), "conv3d");
  if (bias != nullptr && bias->shape() != Shape{spec.out_channels}) {
    throw ShapeError(fmt::format("conv3d: bias shape {} does not match {} output channels",
                                 shape_str(bias->shape()), spec.out_channels));
  }
  Tensor y({g.batch, g.cout, g.out.t, g.out.h, g.out.w});
  const double* xd = x.raw();
  const double* wd = weight.raw();
  double* yd = y.raw();
  const std::size_t kvol = spec.kernel.volume();
  const Index sw = static_cast<Index>(spec.stride.w);
  const Index planes = static_cast<Index>(g.batch * g.cout);

#pragma omp parallel for schedule(static)
  for (Index n = 0; n < planes; ++n) {
    const std::size_t b = static_cast<std::size_t>(n) / g.cout;
    const std::size_t oc = static_cast<std::size_t>(n) % g.cout;
    double* out = yd + static_cast<std::size_t>(n) * g.out_volume;
    std::fill(out, out + g.out_volume, bias != nullptr ? (*bias)[oc] : 0.0);
    for (std::size_t ic = 0; ic < g.cin; ++ic) {
      const double* in = xd + (b * g.cin + ic) * g.in_volume;
      const double* wk = wd + (oc * g.cin + ic) * kvol;
      for_each_tap(g, spec, [&](std::size_t woff, Index orow, Index irow, Index count) {
        const double wv = wk[woff];
        double* o = out + orow;
        const double* i = in + irow;
        if (sw == 1) {
          for (Index j = 0; j < count; ++j) o[j] += wv * i[j];
        } else {
          for (Index j = 0; j < count; ++j) o[j] += wv * i[j * sw];
        }
      });
    }
  }
  return y;
}

Tensor conv3d_backward_input(const Tensor& grad_out, const Tensor& weight, const Shape& input_shape,
                             const ConvSpec& spec) {
  const Geometry g = make_geometry(input_shape, spec);
  require_weight(weight, spec.weight_shape(), "conv3d_backward_input");
  const Shape expected{g.batch, g.cout, g.out.t, g.out.h, g.out.w};
  if (grad_out.shape() != expected) {
    throw ShapeError(fmt::format("conv3d_backward_input: gradient shape {} does not match output {}",
                                 shape_str(grad_out.shape()), shape_str(expected)));
  }
  Tensor dx(input_shape);
  const double* gd = grad_out.raw();
  const double* wd = weight.raw();
  double* xd = dx.raw();
  const std::size_t kvol = spec.kernel.volume();
  const Index sw = static_cast<Index>(spec.stride.w);
  const Index planes = static_cast<Index>(g.batch * g.cin);

#pragma omp parallel for schedule(static)
  for (Index n = 0; n < planes; ++n) {
    const std::size_t b = static_cast<std::size_t>(n) / g.cin;
    const std::size_t ic = static_cast<std::size_t>(n) % g.cin;
    double* in = xd + static_cast<std::size_t>(n) * g.in_volume;
    for (std::size_t oc = 0; oc < g.cout; ++oc) {
      const double* out = gd + (b * g.cout + oc) * g.out_volume;
      const double* wk = wd + (oc * g.cin + ic) * kvol;
      for_each_tap(g, spec, [&](std::size_t woff, Index orow, Index irow, Index count) {
        const double wv = wk[woff];
        const double* o = out + orow;
        double* i = in + irow;
        if (sw == 1) {
          for (Index j = 0; j < count; ++j) i[j] += wv * o[j];
        } else {
          for (Index j = 0; j < count; ++j) i[j * sw] += wv * o[j];
        }
      });
    }
  }
  return dx;
}

Tensor conv3d_backward_weight(const Tensor& x, const Tensor& grad_out, const ConvSpec& spec) {
  const Geometry g = make_geometry(x.shape(), spec);
  const Shape expected{g.batch, g.cout, g.out.t, g.out.h, g.out.w};
  if (grad_out.shape() != expected) {
    throw ShapeError(fmt::format("conv3d_backward_weight: gradient shape {} does not match output {}",
                                 shape_str(grad_out.shape()), shape_str(expected)));
  }
  Tensor dw(spec.weight_shape());
  const double* xd = x.raw();
  const double* gd = grad_out.raw();
  double* wd = dw.raw();
  const std::size_t kvol = spec.kernel.volume();
  const Index sw = static_cast<Index>(spec.stride.w);
  const Index pairs = static_cast<Index>(g.cout * g.cin);

#pragma omp parallel for schedule(static)
  for (Index n = 0; n < pairs; ++n) {
    const std::size_t oc = static_cast<std::size_t>(n) / g.cin;
    const std::size_t ic = static_cast<std::size_t>(n) % g.cin;
    double* wk = wd + static_cast<std::size_t>(n) * kvol;
    for (std::size_t b = 0; b < g.batch; ++b) {
      const double* in = xd + (b * g.cin + ic) * g.in_volume;
      const double* out = gd + (b * g.cout + oc) * g.out_volume;
      for_each_tap(g, spec, [&](std::size_t woff, Index orow, Index irow, Index count) {
        const double* o = out + orow;
        const double* i = in + irow;
        double acc = 0.0;
        if (sw == 1) {
          for (Index j = 0; j < count; ++j) acc += o[j] * i[j];
        } else {
          for (Index j = 0; j < count; ++j) acc += o[j] * i[j * sw];
        }
        wk[woff] += acc;
      });
    }
  }
  return dw;
}

Tensor channel_sum(const Tensor& grad_out) {
  if (grad_out.rank() < 2) throw ShapeError("channel_sum expects rank >= 2");
  const std::size_t batch = grad_out.dim(0);
  const std::size_t channels = grad_out.dim(1);
  const std::size_t inner = grad_out.numel() / (batch * channels);
  Tensor out({channels});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double* p = grad_out.raw() + (b * channels + c) * inner;
      double acc = 0.0;
      for (std::size_t i = 0; i < inner; ++i) acc += p[i];
      out[c] += acc;
    }
  }
  return out;
}

namespace {

// The convolution whose input-gradient is the given transposed convolution.
ConvSpec adjoint_spec(const ConvSpec& spec) {
  ConvSpec conv = spec;
  conv.in_channels = spec.out_channels;
  conv.out_channels = spec.in_channels;
  conv.bias = false;
  return conv;
}

}  // namespace

Tensor transposed_conv3d(const Tensor& x, const Tensor& weight, const Tensor* bias,
                         const ConvSpec& spec) {
  if (x.rank() != 5) {
    throw ShapeError(fmt::format("transposed_conv3d expects a rank-5 input, got {}",
                                 shape_str(x.shape())));
  }
  if (x.dim(1) != spec.in_channels) {
    throw ShapeError(fmt::format("transposed_conv3d: input {} has {} channels, spec expects {}",
                                 shape_str(x.shape()), x.dim(1), spec.in_channels));
  }
  require_weight(weight, spec.transposed_weight_shape(), "transposed_conv3d");
  const Extent3 out = spec.transposed_output_extent(spatial_extent(x.shape()));
  const Shape out_shape{x.dim(0), spec.out_channels, out.t, out.h, out.w};
  Tensor y = conv3d_backward_input(x, weight, out_shape, adjoint_spec(spec));
  if (bias != nullptr) {
    if (bias->shape() != Shape{spec.out_channels}) {
      throw ShapeError(fmt::format("transposed_conv3d: bias shape {} does not match {} channels",
                                   shape_str(bias->shape()), spec.out_channels));
    }
    const std::size_t vol = out.volume();
    for (std::size_t b = 0; b < x.dim(0); ++b) {
      for (std::size_t c = 0; c < spec.out_channels; ++c) {
        double* p = y.raw() + (b * spec.out_channels + c) * vol;
        for (std::size_t i = 0; i < vol; ++i) p[i] += (*bias)[c];
      }
    }
  }
  return y;
}

void SeparableConvSpec::validate() const {
  spatial.validate();
  temporal.validate();
  if (spatial.kernel.t != 1 || spatial.stride.t != 1 || spatial.padding.t != 0) {
    throw ShapeError("separable conv: the spatial factor must not touch the temporal axis");
  }
  if (temporal.kernel.h != 1 || temporal.kernel.w != 1 || temporal.stride.h != 1 ||
      temporal.stride.w != 1 || temporal.padding.h != 0 || temporal.padding.w != 0) {
    throw ShapeError("separable conv: the temporal factor must be kT x 1 x 1");
  }
  if (spatial.out_channels != temporal.in_channels) {
    throw ShapeError(fmt::format("separable conv: spatial factor emits {} channels, temporal expects {}",
                                 spatial.out_channels, temporal.in_channels));
  }
}

Tensor separable_conv3d(const Tensor& x, const Tensor& spatial_weight,
                        const Tensor& temporal_weight, const SeparableConvSpec& spec,
                        const std::function<Tensor(const Tensor&)>& between) {
  spec.validate();
  Tensor mid = conv3d(x, spatial_weight, nullptr, spec.spatial);
  if (between) mid = between(mid);
  return conv3d(mid, temporal_weight, nullptr, spec.temporal);
}

Var conv3d(Tape& tape, const Var& x, const Var& weight, const std::optional<Var>& bias,
           const ConvSpec& spec) {
  Tensor y = conv3d(x.value(), weight.value(), bias ? &bias->value() : nullptr, spec);
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return tape.record(std::move(y), std::move(inputs), [spec](BackwardContext& ctx) {
    const Tensor& gy = ctx.grad_output();
    if (ctx.wants(0)) {
      ctx.grad_input(0).add_inplace(
          conv3d_backward_input(gy, ctx.input(1), ctx.input(0).shape(), spec));
    }
    if (ctx.wants(1)) ctx.grad_input(1).add_inplace(conv3d_backward_weight(ctx.input(0), gy, spec));
    if (ctx.input_count() > 2 && ctx.wants(2)) ctx.grad_input(2).add_inplace(channel_sum(gy));
  });
}

Var transposed_conv3d(Tape& tape, const Var& x, const Var& weight, const std::optional<Var>& bias,
                      const ConvSpec& spec) {
  Tensor y = transposed_conv3d(x.value(), weight.value(), bias ? &bias->value() : nullptr, spec);
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return tape.record(std::move(y), std::move(inputs), [spec](BackwardContext& ctx) {
    const Tensor& gy = ctx.grad_output();
    const ConvSpec conv = adjoint_spec(spec);
    if (ctx.wants(0)) ctx.grad_input(0).add_inplace(conv3d(gy, ctx.input(1), nullptr, conv));
    if (ctx.wants(1)) ctx.grad_input(1).add_inplace(conv3d_backward_weight(gy, ctx.input(0), conv));
    if (ctx.input_count() > 2 && ctx.wants(2)) ctx.grad_input(2).add_inplace(channel_sum(gy));
  });
}

Var separable_conv3d(Tape& tape, const Var& x, const SeparableWeights& weights,
                     const SeparableConvSpec& spec, Mode mode) {
  spec.validate();
  Var mid = conv3d(tape, x, weights.spatial, std::nullopt, spec.spatial);
  if (spec.activation) {
    if (weights.stats == nullptr || !weights.gamma.valid() || !weights.beta.valid()) {
      throw std::invalid_argument("separable conv: activation requires batch-norm parameters");
    }
    mid = relu(tape, batchnorm(tape, mid, weights.gamma, weights.beta, *weights.stats, mode));
  }
  return conv3d(tape, mid, weights.temporal, std::nullopt, spec.temporal);
}

}  // namespace tased
