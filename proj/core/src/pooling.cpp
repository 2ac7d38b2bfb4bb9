#include <cstddef>
#include <cstdint>
#include <vector>

#include <fmt/format.h>

#include "tased/error.hpp"
#include "tased/ops.hpp"

namespace tased {

Extent3 PoolSpec::effective_stride() const {
  return {stride.t == 0 ? kernel.t : stride.t, stride.h == 0 ? kernel.h : stride.h,
          stride.w == 0 ? kernel.w : stride.w};
}

Extent3 PoolSpec::output_extent(Extent3 in) const {
  if (kernel.t == 0 || kernel.h == 0 || kernel.w == 0) throw ShapeError("pool: kernel entries must be >= 1");
  const Extent3 s = effective_stride();
  auto axis = [](std::size_t n, std::size_t k, std::size_t st, const char* name) {
    if (k > n) {
      throw ShapeError(fmt::format("pool: {} window {} exceeds input extent {} (pooling is unpadded)",
                                   name, k, n));
    }
    return (n - k) / st + 1;
  };
  return {axis(in.t, kernel.t, s.t, "temporal"), axis(in.h, kernel.h, s.h, "height"),
          axis(in.w, kernel.w, s.w, "width")};
}

std::pair<Tensor, Switches> maxpool3d_with_switches(const Tensor& x, const PoolSpec& pool) {
  const Extent3 in = spatial_extent(x.shape());
  const Extent3 out = pool.output_extent(in);
  const Extent3 st = pool.effective_stride();
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t in_vol = in.volume();
  const std::size_t out_vol = out.volume();

  Tensor pooled({x.dim(0), x.dim(1), out.t, out.h, out.w});
  Switches sw;
  sw.shape = pooled.shape();
  sw.source_shape = x.shape();
  sw.index.resize(pooled.numel());

  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x.raw() + p * in_vol;
    std::size_t o = p * out_vol;
    for (std::size_t to = 0; to < out.t; ++to) {
      for (std::size_t ho = 0; ho < out.h; ++ho) {
        for (std::size_t wo = 0; wo < out.w; ++wo, ++o) {
          // Row-major scan; strict comparison keeps the first maximum on ties.
          std::size_t best = ((to * st.t) * in.h + ho * st.h) * in.w + wo * st.w;
          double best_value = src[best];
          for (std::size_t kt = 0; kt < pool.kernel.t; ++kt) {
            for (std::size_t kh = 0; kh < pool.kernel.h; ++kh) {
              const std::size_t row = ((to * st.t + kt) * in.h + ho * st.h + kh) * in.w + wo * st.w;
              for (std::size_t kw = 0; kw < pool.kernel.w; ++kw) {
                if (src[row + kw] > best_value) {
                  best_value = src[row + kw];
                  best = row + kw;
                }
              }
            }
          }
          pooled[o] = best_value;
          sw.index[o] = static_cast<std::int64_t>(p * in_vol + best);
        }
      }
    }
  }
  return {std::move(pooled), std::move(sw)};
}

namespace {

void check_switches(const Switches& s) {
  if (s.index.size() != shape_numel(s.shape) || s.source_shape.size() != 5 || s.shape.size() != 5 ||
      s.shape[0] != s.source_shape[0] || s.shape[1] != s.source_shape[1]) {
    throw ShapeError(fmt::format("corrupt switches: pooled shape {} vs source shape {}",
                                 shape_str(s.shape), shape_str(s.source_shape)));
  }
  const std::size_t planes = s.shape[0] * s.shape[1];
  const std::size_t out_vol = shape_numel(s.shape) / planes;
  const std::size_t in_vol = shape_numel(s.source_shape) / planes;
  const auto total = static_cast<std::int64_t>(shape_numel(s.source_shape));
  for (std::size_t i = 0; i < s.index.size(); ++i) {
    const std::int64_t idx = s.index[i];
    if (idx < 0 || idx >= total) {
      throw ShapeError(fmt::format("corrupt switches: index {} at position {} is outside a source of "
                                   "{} elements",
                                   idx, i, total));
    }
    if (static_cast<std::size_t>(idx) / in_vol != i / out_vol) {
      throw ShapeError(fmt::format("corrupt switches: index {} at position {} crosses a "
                                   "batch/channel plane",
                                   idx, i));
    }
  }
}

}  // namespace

Tensor maxunpool3d(const Tensor& z, const Switches& switches) {
  if (z.shape() != switches.shape) {
    throw ShapeError(fmt::format("maxunpool3d: input shape {} does not match switch shape {}",
                                 shape_str(z.shape()), shape_str(switches.shape)));
  }
  check_switches(switches);
  Tensor out(switches.source_shape);
  // Accumulating keeps this the exact adjoint of gather_switches even for
  // overlapping windows; with non-overlapping pooling no slot is hit twice.
  for (std::size_t i = 0; i < z.numel(); ++i) out[static_cast<std::size_t>(switches.index[i])] += z[i];
  return out;
}

Tensor gather_switches(const Tensor& grad_out, const Switches& switches) {
  if (grad_out.shape() != switches.source_shape) {
    throw ShapeError(fmt::format("gather_switches: gradient shape {} does not match source shape {}",
                                 shape_str(grad_out.shape()), shape_str(switches.source_shape)));
  }
  check_switches(switches);
  Tensor out(switches.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = grad_out[static_cast<std::size_t>(switches.index[i])];
  return out;
}

Switches aux_pool_pair(const Tensor& encoder_feature, std::size_t temporal_factor,
                       std::size_t pool_h, std::size_t pool_w) {
  const Extent3 in = spatial_extent(encoder_feature.shape());
  if (temporal_factor == 0 || pool_h == 0 || pool_w == 0 || in.t % temporal_factor != 0 ||
      in.h % pool_h != 0 || in.w % pool_w != 0) {
    throw ShapeError(fmt::format("aux_pool_pair: feature dims (T={}, H={}, W={}) are not divisible by "
                                 "factors (temporal={}, height={}, width={})",
                                 in.t, in.h, in.w, temporal_factor, pool_h, pool_w));
  }
  // Stride defaults to the kernel; spelling out an Extent3 stride as {} would
  // mean 1 along every axis.
  auto [reduced, unused] = maxpool3d_with_switches(encoder_feature, PoolSpec{{temporal_factor, 1, 1}});
  return maxpool3d_with_switches(reduced, PoolSpec{{1, pool_h, pool_w}}).second;
}

std::pair<Var, Switches> maxpool3d(Tape& tape, const Var& x, const PoolSpec& pool) {
  auto [pooled, switches] = maxpool3d_with_switches(x.value(), pool);
  Var out = tape.record(std::move(pooled), {x}, [switches](BackwardContext& ctx) {
    if (ctx.wants(0)) ctx.grad_input(0).add_inplace(maxunpool3d(ctx.grad_output(), switches));
  });
  return {out, std::move(switches)};
}

Var maxunpool3d(Tape& tape, const Var& z, const Switches& switches) {
  Tensor out = maxunpool3d(z.value(), switches);
  return tape.record(std::move(out), {z}, [switches](BackwardContext& ctx) {
    if (ctx.wants(0)) ctx.grad_input(0).add_inplace(gather_switches(ctx.grad_output(), switches));
  });
}

}  // namespace tased
