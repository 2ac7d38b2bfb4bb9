#include <cmath>
#include <cstddef>

#include <fmt/format.h>

#include "tased/error.hpp"
#include "tased/ops.hpp"

namespace tased {

BatchNormState::BatchNormState(std::size_t channels)
    : running_mean(Tensor::zeros({channels})), running_var(Tensor::ones({channels})) {}

namespace {

struct ChannelLayout {
  std::size_t batch;
  std::size_t channels;
  std::size_t inner;
};

ChannelLayout layout_of(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        const BatchNormState& state) {
  if (x.rank() < 2) throw ShapeError("batchnorm expects rank >= 2");
  const std::size_t c = x.dim(1);
  const Shape expected{c};
  if (gamma.shape() != expected || beta.shape() != expected || state.running_mean.shape() != expected ||
      state.running_var.shape() != expected) {
    throw ShapeError(fmt::format("batchnorm: input {} has {} channels but gamma {} / beta {} / running "
                                 "stats {} do not match",
                                 shape_str(x.shape()), c, shape_str(gamma.shape()),
                                 shape_str(beta.shape()), shape_str(state.running_mean.shape())));
  }
  return {x.dim(0), c, x.numel() / (x.dim(0) * c)};
}

double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

BatchNormForward batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           BatchNormState& state, Mode mode) {
  const ChannelLayout l = layout_of(x, gamma, beta, state);
  BatchNormForward f{Tensor(x.shape()), Tensor({l.channels}), Tensor({l.channels})};
  const double n = static_cast<double>(l.batch * l.inner);

  for (std::size_t c = 0; c < l.channels; ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (mode == Mode::train) {
      for (std::size_t b = 0; b < l.batch; ++b) {
        const double* p = x.raw() + (b * l.channels + c) * l.inner;
        for (std::size_t i = 0; i < l.inner; ++i) mean += p[i];
      }
      mean /= n;
      for (std::size_t b = 0; b < l.batch; ++b) {
        const double* p = x.raw() + (b * l.channels + c) * l.inner;
        for (std::size_t i = 0; i < l.inner; ++i) var += (p[i] - mean) * (p[i] - mean);
      }
      var /= n;
      const double unbiased = n > 1.0 ? var * n / (n - 1.0) : var;
      const double m = state.momentum;
      state.running_mean[c] = round_to_float((1.0 - m) * state.running_mean[c] + m * mean);
      state.running_var[c] = round_to_float((1.0 - m) * state.running_var[c] + m * unbiased);
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    const double inv_std = 1.0 / std::sqrt(var + state.eps);
    f.mean[c] = mean;
    f.inv_std[c] = inv_std;
    const double g = gamma[c] * inv_std;
    for (std::size_t b = 0; b < l.batch; ++b) {
      const std::size_t off = (b * l.channels + c) * l.inner;
      const double* p = x.raw() + off;
      double* q = f.output.raw() + off;
      for (std::size_t i = 0; i < l.inner; ++i) q[i] = (p[i] - mean) * g + beta[c];
    }
  }
  return f;
}

BatchNormGrads batchnorm_backward(const Tensor& grad_out, const Tensor& x, const Tensor& gamma,
                                  const BatchNormForward& forward, Mode mode) {
  if (grad_out.shape() != x.shape()) {
    throw ShapeError(fmt::format("batchnorm_backward: gradient {} vs input {}",
                                 shape_str(grad_out.shape()), shape_str(x.shape())));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t inner = x.numel() / (batch * channels);
  const double n = static_cast<double>(batch * inner);
  BatchNormGrads g{Tensor(x.shape()), Tensor({channels}), Tensor({channels})};

  for (std::size_t c = 0; c < channels; ++c) {
    const double mean = forward.mean[c];
    const double inv_std = forward.inv_std[c];
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels + c) * inner;
      const double* dy = grad_out.raw() + off;
      const double* p = x.raw() + off;
      for (std::size_t i = 0; i < inner; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * (p[i] - mean) * inv_std;
      }
    }
    g.beta[c] = sum_dy;
    g.gamma[c] = sum_dy_xhat;
    const double k = gamma[c] * inv_std;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels + c) * inner;
      const double* dy = grad_out.raw() + off;
      const double* p = x.raw() + off;
      double* dx = g.input.raw() + off;
      if (mode == Mode::train) {
        for (std::size_t i = 0; i < inner; ++i) {
          const double xhat = (p[i] - mean) * inv_std;
          dx[i] = k * (dy[i] - sum_dy / n - xhat * sum_dy_xhat / n);
        }
      } else {
        for (std::size_t i = 0; i < inner; ++i) dx[i] = k * dy[i];
      }
    }
  }
  return g;
}

Var batchnorm(Tape& tape, const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
              Mode mode) {
  BatchNormForward f = batchnorm(x.value(), gamma.value(), beta.value(), state, mode);
  Tensor out = std::move(f.output);
  f.output = Tensor();
  return tape.record(std::move(out), {x, gamma, beta},
                     [stats = std::move(f), mode](BackwardContext& ctx) {
                       BatchNormGrads g = batchnorm_backward(ctx.grad_output(), ctx.input(0),
                                                             ctx.input(1), stats, mode);
                       if (ctx.wants(0)) ctx.grad_input(0).add_inplace(g.input);
                       if (ctx.wants(1)) ctx.grad_input(1).add_inplace(g.gamma);
                       if (ctx.wants(2)) ctx.grad_input(2).add_inplace(g.beta);
                     });
}

}  // namespace tased
