#include <cmath>
#include <cstddef>
#include <vector>

#include <fmt/format.h>

#include "tased/error.hpp"
#include "tased/ops.hpp"

namespace tased {

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = 1.0 / (1.0 + std::exp(-v));
  return y;
}

namespace {

struct AxisSample {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

// Align-corners sample positions for resizing an axis of length n to m.
std::vector<AxisSample> align_corner_samples(std::size_t n, std::size_t m) {
  std::vector<AxisSample> s(m);
  for (std::size_t j = 0; j < m; ++j) {
    const double pos =
        (n == 1 || m == 1) ? 0.0 : static_cast<double>(j * (n - 1)) / static_cast<double>(m - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    s[j] = {lo, std::min(lo + 1, n - 1), pos - static_cast<double>(lo)};
  }
  return s;
}

// Linear resize of axis `axis` of a rank-5 tensor by an integer factor.
Tensor resize_axis(const Tensor& x, std::size_t axis, std::size_t factor) {
  const std::size_t n = x.dim(axis);
  const std::size_t m = n * factor;
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Shape shape = x.shape();
  shape[axis] = m;
  Tensor y(shape);
  const auto samples = align_corner_samples(n, m);
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = x.raw() + o * n * inner;
    double* dst = y.raw() + o * m * inner;
    for (std::size_t j = 0; j < m; ++j) {
      const AxisSample& s = samples[j];
      const double* a = src + s.lo * inner;
      const double* b = src + s.hi * inner;
      double* d = dst + j * inner;
      for (std::size_t i = 0; i < inner; ++i) d[i] = (1.0 - s.frac) * a[i] + s.frac * b[i];
    }
  }
  return y;
}

Tensor resize_axis_backward(const Tensor& g, std::size_t axis, std::size_t factor) {
  const std::size_t m = g.dim(axis);
  const std::size_t n = m / factor;
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= g.dim(i);
  for (std::size_t i = axis + 1; i < g.rank(); ++i) inner *= g.dim(i);
  Shape shape = g.shape();
  shape[axis] = n;
  Tensor dx(shape);
  const auto samples = align_corner_samples(n, m);
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = g.raw() + o * m * inner;
    double* dst = dx.raw() + o * n * inner;
    for (std::size_t j = 0; j < m; ++j) {
      const AxisSample& s = samples[j];
      const double* d = src + j * inner;
      double* a = dst + s.lo * inner;
      double* b = dst + s.hi * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        a[i] += (1.0 - s.frac) * d[i];
        b[i] += s.frac * d[i];
      }
    }
  }
  return dx;
}

void check_scale(Extent3 scale) {
  if (scale.t == 0 || scale.h == 0 || scale.w == 0) {
    throw ShapeError("trilinear_upsample: scales must be integers >= 1");
  }
}

}  // namespace

Tensor trilinear_upsample(const Tensor& x, Extent3 scale) {
  spatial_extent(x.shape());
  check_scale(scale);
  Tensor y = x;
  const std::size_t factors[3] = {scale.t, scale.h, scale.w};
  for (std::size_t a = 0; a < 3; ++a) {
    if (factors[a] != 1) y = resize_axis(y, a + 2, factors[a]);
  }
  return y;
}

Tensor trilinear_upsample_backward(const Tensor& grad_out, const Shape& input_shape, Extent3 scale) {
  check_scale(scale);
  const Extent3 in = spatial_extent(input_shape);
  const Shape expected{input_shape[0], input_shape[1], in.t * scale.t, in.h * scale.h, in.w * scale.w};
  if (grad_out.shape() != expected) {
    throw ShapeError(fmt::format("trilinear_upsample_backward: gradient {} vs expected {}",
                                 shape_str(grad_out.shape()), shape_str(expected)));
  }
  Tensor g = grad_out;
  const std::size_t factors[3] = {scale.t, scale.h, scale.w};
  for (std::size_t a = 3; a-- > 0;) {
    if (factors[a] != 1) g = resize_axis_backward(g, a + 2, factors[a]);
  }
  return g;
}

Var relu(Tape& tape, const Var& x) {
  return tape.record(relu(x.value()), {x}, [](BackwardContext& ctx) {
    if (!ctx.wants(0)) return;
    const Tensor& in = ctx.input(0);
    const Tensor& gy = ctx.grad_output();
    Tensor& gx = ctx.grad_input(0);
    for (std::size_t i = 0; i < in.numel(); ++i) {
      if (in[i] > 0.0) gx[i] += gy[i];
    }
  });
}

Var sigmoid(Tape& tape, const Var& x) {
  return tape.record(sigmoid(x.value()), {x}, [](BackwardContext& ctx) {
    if (!ctx.wants(0)) return;
    const Tensor& y = ctx.output();
    const Tensor& gy = ctx.grad_output();
    Tensor& gx = ctx.grad_input(0);
    for (std::size_t i = 0; i < y.numel(); ++i) gx[i] += gy[i] * y[i] * (1.0 - y[i]);
  });
}

Var trilinear_upsample(Tape& tape, const Var& x, Extent3 scale) {
  return tape.record(trilinear_upsample(x.value(), scale), {x}, [scale](BackwardContext& ctx) {
    if (ctx.wants(0)) {
      ctx.grad_input(0).add_inplace(
          trilinear_upsample_backward(ctx.grad_output(), ctx.input(0).shape(), scale));
    }
  });
}

Var reshape(Tape& tape, const Var& x, Shape shape) {
  return tape.record(x.value().reshaped(std::move(shape)), {x}, [](BackwardContext& ctx) {
    if (ctx.wants(0)) {
      ctx.grad_input(0).add_inplace(ctx.grad_output().reshaped(ctx.input(0).shape()));
    }
  });
}

}  // namespace tased
