#pragma once

// Finite-difference checks of every taped operator and of the end-to-end
// tiny network. Shared by the unit tests (few seeds) and the acceptance
// binary (20 seeds).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "oracles.hpp"
#include "tased/autograd.hpp"
#include "tased/model.hpp"
#include "tased/ops.hpp"
#include "tased/rng.hpp"
#include "tased/train.hpp"

namespace tased::testing {

using TapedFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheck {
  std::string op;
  std::uint64_t seed = 0;
  std::string detail;  // the drawn geometry
  GradientComparison result;
  std::size_t kinks = 0;  // coordinates checked one-sided, see probe_coordinate
};

// Gradient of L = <c, f(inputs)> for a fixed random projection c, analytic
// (tape) against central differences, over every element of every input.
inline GradientComparison check_taped(const TapedFn& f, const std::vector<Tensor>& inputs, Rng& rng,
                                      double eps = 1e-6, GradientTolerance tol = {}) {
  Tensor coeffs;
  {
    Tape probe(false);
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(probe.constant(t));
    coeffs = random_tensor(f(probe, vars).shape(), rng);
  }

  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
  const Var out = f(tape, vars);
  const Var root = tape.record(Tensor({1}, dot(out.value(), coeffs)), {out}, [coeffs](BackwardContext& ctx) {
    ctx.grad_input(0).add_inplace(coeffs, ctx.grad_output()[0]);
  });
  tape.backward(root);

  std::vector<double> analytic;
  std::vector<double> numeric;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor g = tape.grad(vars[i]);
    analytic.insert(analytic.end(), g.data().begin(), g.data().end());
    auto loss = [&](const Tensor& xi) {
      Tape t(false);
      std::vector<Var> vs;
      for (std::size_t j = 0; j < inputs.size(); ++j) vs.push_back(t.constant(j == i ? xi : inputs[j]));
      return dot(f(t, vs).value(), coeffs);
    };
    const Tensor n = finite_difference_grad(loss, inputs[i], eps);
    numeric.insert(numeric.end(), n.data().begin(), n.data().end());
  }
  return compare_gradients(analytic, numeric, tol);
}

namespace detail {

// FNV-1a, so per-op streams do not depend on the standard library's hash.
inline std::uint64_t stream_id(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

inline std::string spec_str(const ConvSpec& s) {
  return fmt::format("{}->{} k{}x{}x{} s{}x{}x{} p{}x{}x{}{}", s.in_channels, s.out_channels, s.kernel.t, s.kernel.h,
                     s.kernel.w, s.stride.t, s.stride.h, s.stride.w, s.padding.t, s.padding.h, s.padding.w,
                     s.bias ? " +bias" : "");
}

// Random conv geometry over an input no larger than 2x3x4x5x6.
inline std::pair<ConvSpec, Shape> random_conv(Rng& rng) {
  const Shape limits{2, 3, 4, 5, 6};
  for (;;) {
    ConvSpec s;
    s.in_channels = pick(rng, 1, 3);
    s.out_channels = pick(rng, 1, 3);
    s.kernel = {pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
    s.stride = {pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 2)};
    s.padding = {pick(rng, 0, 1), pick(rng, 0, 1), pick(rng, 0, 1)};
    s.bias = rng.uniform() < 0.5;
    const Shape x{pick(rng, 1, limits[0]), s.in_channels, pick(rng, 1, limits[2]), pick(rng, 1, limits[3]),
                  pick(rng, 1, limits[4])};
    const bool fits = x[2] + 2 * s.padding.t >= s.kernel.t && x[3] + 2 * s.padding.h >= s.kernel.h &&
                      x[4] + 2 * s.padding.w >= s.kernel.w && s.padding.t < s.kernel.t &&
                      s.padding.h < s.kernel.h && s.padding.w < s.kernel.w;
    if (fits) return {s, x};
  }
}

}  // namespace detail

inline const std::vector<std::string>& gradient_ops() {
  static const std::vector<std::string> ops{"conv3d",         "transposed_conv3d", "separable_conv3d",
                                            "maxpool3d",      "maxunpool3d",       "aux_pool_unpool",
                                            "batchnorm_train", "batchnorm_eval",   "relu",
                                            "sigmoid",        "trilinear_upsample", "reshape",
                                            "kl_loss"};
  return ops;
}

// One finite-difference check of `op` on geometry and data drawn from `seed`.
inline GradCheck check_op(const std::string& op, std::uint64_t seed) {
  using detail::pick;
  Rng rng(derive_seed(seed, detail::stream_id(op)));
  GradCheck r{op, seed, "", {}};

  if (op == "conv3d") {
    auto [spec, xs] = detail::random_conv(rng);
    std::vector<Tensor> in{random_tensor(xs, rng), random_tensor(spec.weight_shape(), rng)};
    if (spec.bias) in.push_back(random_tensor({spec.out_channels}, rng));
    r.detail = detail::spec_str(spec);
    r.result = check_taped(
        [spec = spec](Tape& t, const std::vector<Var>& v) {
          return conv3d(t, v[0], v[1], v.size() > 2 ? std::optional<Var>(v[2]) : std::nullopt, spec);
        },
        in, rng);
  } else if (op == "transposed_conv3d") {
    ConvSpec spec;
    spec.in_channels = pick(rng, 1, 3);
    spec.out_channels = pick(rng, 1, 3);
    spec.kernel = {pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)};
    spec.stride = {pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 2)};
    spec.padding = {0, spec.kernel.h > 2 ? pick(rng, 0, 1) : 0, spec.kernel.w > 2 ? pick(rng, 0, 1) : 0};
    spec.bias = rng.uniform() < 0.5;
    const Shape xs{pick(rng, 1, 2), spec.in_channels, pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
    std::vector<Tensor> in{random_tensor(xs, rng), random_tensor(spec.transposed_weight_shape(), rng)};
    if (spec.bias) in.push_back(random_tensor({spec.out_channels}, rng));
    r.detail = detail::spec_str(spec);
    r.result = check_taped(
        [spec](Tape& t, const std::vector<Var>& v) {
          return transposed_conv3d(t, v[0], v[1], v.size() > 2 ? std::optional<Var>(v[2]) : std::nullopt, spec);
        },
        in, rng);
  } else if (op == "separable_conv3d") {
    SeparableConvSpec spec;
    const std::size_t cin = pick(rng, 1, 3), mid = pick(rng, 1, 3), cout = pick(rng, 1, 3);
    const std::size_t k = pick(rng, 1, 3), kt = pick(rng, 1, 3);
    spec.spatial.in_channels = cin;
    spec.spatial.out_channels = mid;
    spec.spatial.kernel = {1, k, k};
    spec.spatial.padding = {0, k / 2, k / 2};
    spec.temporal.in_channels = mid;
    spec.temporal.out_channels = cout;
    spec.temporal.kernel = {kt, 1, 1};
    spec.temporal.padding = {kt / 2, 0, 0};
    spec.activation = rng.uniform() < 0.5;
    const Shape xs{pick(rng, 1, 2), cin, pick(rng, 2, 4), pick(rng, 2, 5), pick(rng, 2, 6)};
    std::vector<Tensor> in{random_tensor(xs, rng), random_tensor(spec.spatial.weight_shape(), rng),
                           random_tensor(spec.temporal.weight_shape(), rng)};
    if (spec.activation) {
      in.push_back(random_tensor({mid}, rng, 0.5, 1.5));
      in.push_back(random_tensor({mid}, rng, -0.5, 0.5));
    }
    r.detail = fmt::format("k{} kt{} {}->{}->{}{}", k, kt, cin, mid, cout, spec.activation ? " +bn/relu" : "");
    r.result = check_taped(
        [spec, mid](Tape& t, const std::vector<Var>& v) {
          BatchNormState stats(mid);
          SeparableWeights w{v[1], v[2], {}, {}, nullptr};
          if (spec.activation) {
            w.gamma = v[3];
            w.beta = v[4];
            w.stats = &stats;
          }
          return separable_conv3d(t, v[0], w, spec, Mode::train);
        },
        in, rng);
  } else if (op == "maxpool3d") {
    PoolSpec pool;
    pool.kernel = {pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 2)};
    const bool overlap = rng.uniform() < 0.3;
    pool.stride = overlap ? Extent3{1, 1, 1} : pool.kernel;
    const Shape xs{pick(rng, 1, 2), pick(rng, 1, 3), pool.kernel.t * pick(rng, 1, 2), pool.kernel.h * pick(rng, 1, 2),
                   pool.kernel.w * pick(rng, 1, 3)};
    r.detail = fmt::format("k{}x{}x{}{}", pool.kernel.t, pool.kernel.h, pool.kernel.w, overlap ? " overlapping" : "");
    r.result = check_taped([pool](Tape& t, const std::vector<Var>& v) { return maxpool3d(t, v[0], pool).first; },
                           {distinct_tensor(xs, rng)}, rng);
  } else if (op == "maxunpool3d" || op == "aux_pool_unpool") {
    const bool aux = op == "aux_pool_unpool";
    const std::size_t k = aux ? pick(rng, 1, 2) : 1;
    const Extent3 sp{1, pick(rng, 1, 2), pick(rng, 1, 2)};
    const Shape xs{pick(rng, 1, 2), pick(rng, 1, 3), k * pick(rng, 1, 2), sp.h * pick(rng, 1, 3), sp.w * pick(rng, 1, 3)};
    const Tensor source = distinct_tensor(xs, rng);
    const Switches s = aux ? aux_pool_pair(source, k, sp.h, sp.w)
                           : maxpool3d_with_switches(source, PoolSpec{sp, sp}).second;
    r.detail = fmt::format("k{} 1x{}x{}", k, sp.h, sp.w);
    r.result = check_taped([s](Tape& t, const std::vector<Var>& v) { return maxunpool3d(t, v[0], s); },
                           {random_tensor(s.shape, rng)}, rng);
  } else if (op == "batchnorm_train" || op == "batchnorm_eval") {
    const Mode mode = op == "batchnorm_train" ? Mode::train : Mode::eval;
    const std::size_t c = pick(rng, 1, 3);
    const Shape xs{pick(rng, 1, 2), c, pick(rng, 1, 3), pick(rng, 2, 4), pick(rng, 2, 4)};
    BatchNormState base(c);
    base.running_mean = random_tensor({c}, rng, -0.5, 0.5);
    base.running_var = random_tensor({c}, rng, 0.5, 2.0);
    r.detail = fmt::format("C={}", c);
    r.result = check_taped(
        [base, mode](Tape& t, const std::vector<Var>& v) {
          BatchNormState state = base;
          return batchnorm(t, v[0], v[1], v[2], state, mode);
        },
        {random_tensor(xs, rng, -2.0, 2.0), random_tensor({c}, rng, 0.5, 1.5), random_tensor({c}, rng, -0.5, 0.5)},
        rng);
  } else if (op == "relu") {
    const Shape xs{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 5), pick(rng, 1, 6)};
    r.result = check_taped([](Tape& t, const std::vector<Var>& v) { return relu(t, v[0]); },
                           {away_from_zero(xs, rng)}, rng);
  } else if (op == "sigmoid") {
    const Shape xs{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 5), pick(rng, 1, 6)};
    r.result = check_taped([](Tape& t, const std::vector<Var>& v) { return sigmoid(t, v[0]); },
                           {random_tensor(xs, rng, -4.0, 4.0)}, rng);
  } else if (op == "trilinear_upsample") {
    const Extent3 scale{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3)};
    const Shape xs{pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 4)};
    r.detail = fmt::format("x{}x{}x{}", scale.t, scale.h, scale.w);
    r.result = check_taped([scale](Tape& t, const std::vector<Var>& v) { return trilinear_upsample(t, v[0], scale); },
                           {random_tensor(xs, rng)}, rng);
  } else if (op == "reshape") {
    const Shape xs{pick(rng, 1, 2), pick(rng, 1, 3), 1, pick(rng, 1, 5), pick(rng, 1, 6)};
    r.result = check_taped(
        [xs](Tape& t, const std::vector<Var>& v) { return reshape(t, v[0], {xs[0], xs[1], xs[3], xs[4]}); },
        {random_tensor(xs, rng)}, rng);
  } else if (op == "kl_loss") {
    const Shape xs{pick(rng, 1, 2), 1, pick(rng, 2, 5), pick(rng, 2, 6)};
    const Tensor gt = random_tensor(xs, rng, 0.0, 1.0);
    r.result = check_taped([gt](Tape& t, const std::vector<Var>& v) { return kl_loss(t, v[0], gt); },
                           {random_tensor(xs, rng, 0.05, 1.0)}, rng);
  } else {
    throw std::invalid_argument("unknown op " + op);
  }
  return r;
}

// Central difference at one coordinate, made aware of kinks. The network is
// piecewise smooth (ReLU, max-pool switches), so a step of eps can cross a
// switch. When the one-sided differences disagree beyond tolerance the loss
// is not differentiable inside [x - eps, x + eps]; the analytic value must
// then match one of the one-sided derivatives instead of their average.
struct CoordinateProbe {
  double numeric = 0.0;
  bool kink = false;
};

inline CoordinateProbe probe_coordinate(double analytic, double up, double center, double down, double eps,
                                        GradientTolerance tol = {}) {
  const double forward = (up - center) / eps;
  const double backward = (center - down) / eps;
  const double central = (up - down) / (2.0 * eps);
  const auto within = [&](double a, double n) { return std::abs(a - n) <= tol.atol + tol.rtol * std::abs(n); };
  if (within(forward, backward)) return {central, false};
  return {std::abs(analytic - forward) < std::abs(analytic - backward) ? forward : backward, true};
}

// KL loss of the train-mode tiny network (T=16, 32x64, channels
// [2,4,8,16]): analytic gradients for the input clip and every parameter
// tensor against central differences on a random subset of coordinates.
inline GradCheck check_network(std::uint64_t seed, std::size_t input_samples = 24,
                               std::size_t per_parameter = 2) {
  GradCheck r{"network", seed, "tiny T=16 32x64", {}};
  ModelConfig config = ModelConfig::tiny();
  config.seed = seed;
  Network net = build(config);
  Rng rng(derive_seed(seed, 0x6e6574));
  Tensor clip = random_tensor({1, 3, 16, 32, 64}, rng);
  const Tensor gt = random_tensor({1, 1, 32, 64}, rng, 0.0, 1.0);

  net.zero_grad();
  Tape tape;
  const Var x = tape.variable(clip);
  tape.backward(kl_loss(tape, net.forward(tape, x, Mode::train), gt));
  const Tensor input_grad = tape.grad(x);

  auto loss = [&]() {
    Tape t(false);
    return kl_loss(net.forward(t, t.constant(clip), Mode::train).value(), gt);
  };
  const double eps = 1e-6;
  const double center = loss();
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::size_t kinks = 0;
  auto probe = [&](double& value, double grad) {
    const double saved = value;
    value = saved + eps;
    const double up = loss();
    value = saved - eps;
    const double down = loss();
    value = saved;
    const CoordinateProbe p = probe_coordinate(grad, up, center, down, eps);
    kinks += p.kink;
    analytic.push_back(grad);
    numeric.push_back(p.numeric);
  };

  for (std::size_t i : rng.sample_without_replacement(clip.numel(), input_samples)) probe(clip[i], input_grad[i]);
  for (Parameter* p : net.parameters()) {
    const std::size_t k = std::min(per_parameter, p->value.numel());
    for (std::size_t i : rng.sample_without_replacement(p->value.numel(), k)) probe(p->value[i], p->grad[i]);
  }
  r.result = compare_gradients(analytic, numeric);
  r.kinks = kinks;
  return r;
}

}  // namespace tased::testing
