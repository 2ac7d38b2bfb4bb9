#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "tased/error.hpp"
#include "tased/ops.hpp"

namespace tased {
namespace {

using testing::at5;
using testing::brute_conv3d;
using testing::brute_maxpool;
using testing::brute_transposed_conv3d;
using testing::distinct_tensor;
using testing::random_tensor;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

ConvSpec conv_spec(std::size_t in, std::size_t out, Extent3 k, Extent3 s = {1, 1, 1}, Extent3 p = {0, 0, 0},
                   bool bias = false) {
  ConvSpec spec;
  spec.in_channels = in;
  spec.out_channels = out;
  spec.kernel = k;
  spec.stride = s;
  spec.padding = p;
  spec.bias = bias;
  return spec;
}

// ---------------------------------------------------------------------------
// conv3d

TEST(Conv3d, ScalarAffine) {
  const ConvSpec spec = conv_spec(1, 1, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, true);
  const Tensor bias = Tensor::from({1.0});
  const Tensor y = conv3d(Tensor({1, 1, 1, 1, 1}, 3.0), Tensor({1, 1, 1, 1, 1}, 2.0), &bias, spec);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1, 1}));
  EXPECT_EQ(y[0], 7.0);
}

TEST(Conv3d, DeltaKernelWithSamePaddingIsIdentity) {
  Rng rng(1);
  const Tensor x = random_tensor({2, 1, 3, 4, 5}, rng);
  Tensor w({1, 1, 3, 3, 3});
  at5(w, 0, 0, 1, 1, 1) = 1.0;
  EXPECT_TRUE(bit_equal(conv3d(x, w, nullptr, conv_spec(1, 1, {3, 3, 3}, {1, 1, 1}, {1, 1, 1})), x));
}

TEST(Conv3d, MatchesDirectSummationOracle) {
  Rng rng(2);
  const ConvSpec spec = conv_spec(1, 1, {2, 2, 2});
  const Tensor x = random_tensor({1, 1, 2, 3, 3}, rng);
  const Tensor w = random_tensor(spec.weight_shape(), rng);
  EXPECT_LE(max_abs_diff(conv3d(x, w, nullptr, spec), brute_conv3d(x, w, nullptr, spec)), 1e-14);
}

TEST(Conv3dProperty, MatchesOracleOnRandomGeometry) {
  Rng rng(3);
  for (int trial = 0; trial < 150; ++trial) {
    const ConvSpec spec = conv_spec(pick(rng, 1, 3), pick(rng, 1, 3), {pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)},
                                    {pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 2)},
                                    {pick(rng, 0, 1), pick(rng, 0, 1), pick(rng, 0, 1)}, rng.uniform() < 0.5);
    const Shape xs{pick(rng, 1, 2), spec.in_channels, pick(rng, 3, 5), pick(rng, 3, 6), pick(rng, 3, 6)};
    const Tensor x = random_tensor(xs, rng);
    const Tensor w = random_tensor(spec.weight_shape(), rng);
    const Tensor b = random_tensor({spec.out_channels}, rng);
    const Tensor* bias = spec.bias ? &b : nullptr;
    ASSERT_LE(max_abs_diff(conv3d(x, w, bias, spec), brute_conv3d(x, w, bias, spec)), 1e-12) << "trial " << trial;
  }
}

TEST(Conv3d, RejectsChannelMismatchAndEmptyOutput) {
  const ConvSpec spec = conv_spec(2, 1, {1, 3, 3});
  EXPECT_THROW(conv3d(Tensor({1, 3, 1, 4, 4}), Tensor(spec.weight_shape()), nullptr, spec), ShapeError);
  EXPECT_THROW(conv3d(Tensor({1, 2, 1, 2, 2}), Tensor(spec.weight_shape()), nullptr, spec), ShapeError);
  EXPECT_THROW(conv3d(Tensor({1, 2, 4, 4}), Tensor(spec.weight_shape()), nullptr, spec), ShapeError);
}

// ---------------------------------------------------------------------------
// separable_conv3d

SeparableConvSpec separable_spec(std::size_t in, std::size_t mid, std::size_t out, std::size_t k, std::size_t kt,
                                 bool same) {
  SeparableConvSpec s;
  s.spatial = conv_spec(in, mid, {1, k, k}, {1, 1, 1}, {0, same ? k / 2 : 0, same ? k / 2 : 0});
  s.temporal = conv_spec(mid, out, {kt, 1, 1}, {1, 1, 1}, {same ? kt / 2 : 0, 0, 0});
  s.activation = false;
  return s;
}

TEST(SeparableConv3d, IdentityFactorsGiveInput) {
  Rng rng(4);
  const Tensor x = random_tensor({1, 1, 4, 5, 6}, rng);
  const SeparableConvSpec spec = separable_spec(1, 1, 1, 3, 3, true);
  Tensor ws(spec.spatial.weight_shape()), wt(spec.temporal.weight_shape());
  at5(ws, 0, 0, 0, 1, 1) = 1.0;
  at5(wt, 0, 0, 1, 0, 0) = 1.0;
  EXPECT_TRUE(bit_equal(separable_conv3d(x, ws, wt, spec), x));
}

TEST(SeparableConv3d, PointwiseFactorsComposeAsMatrices) {
  Rng rng(5);
  const Tensor x = random_tensor({1, 3, 2, 3, 3}, rng);
  const SeparableConvSpec spec = separable_spec(3, 2, 4, 1, 1, false);
  const Tensor ws = random_tensor(spec.spatial.weight_shape(), rng);
  const Tensor wt = random_tensor(spec.temporal.weight_shape(), rng);
  // (4x2) * (2x3) as a single 1x1x1 kernel.
  Tensor combined({4, 3, 1, 1, 1});
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t m = 0; m < 2; ++m) combined[o * 3 + i] += wt[o * 2 + m] * ws[m * 3 + i];
  const Tensor y = separable_conv3d(x, ws, wt, spec);
  EXPECT_LE(max_abs_diff(y, conv3d(x, combined, nullptr, conv_spec(3, 4, {1, 1, 1}))), 1e-14);
}

TEST(SeparableConv3d, EqualsComposingTwoConvolutionsBitExactly) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const SeparableConvSpec spec = separable_spec(pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3), 3, 3, true);
    const Tensor x = random_tensor({1, spec.spatial.in_channels, 4, 5, 6}, rng);
    const Tensor ws = random_tensor(spec.spatial.weight_shape(), rng);
    const Tensor wt = random_tensor(spec.temporal.weight_shape(), rng);
    const Tensor direct = conv3d(conv3d(x, ws, nullptr, spec.spatial), wt, nullptr, spec.temporal);
    ASSERT_TRUE(bit_equal(separable_conv3d(x, ws, wt, spec), direct));
  }
}

TEST(SeparableConv3d, RejectsSpatialFactorTouchingTime) {
  SeparableConvSpec spec = separable_spec(1, 1, 1, 3, 3, true);
  spec.spatial.kernel.t = 2;
  EXPECT_THROW(spec.validate(), ShapeError);
}

// ---------------------------------------------------------------------------
// transposed_conv3d

TEST(TransposedConv3d, SingleWindowScatter) {
  const ConvSpec spec = conv_spec(1, 1, {1, 2, 2}, {1, 2, 2});
  const Tensor y = transposed_conv3d(Tensor({1, 1, 1, 1, 1}, 3.0), Tensor(spec.transposed_weight_shape(), 0.5),
                                     nullptr, spec);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 2, 2}));
  for (double v : y.data()) EXPECT_EQ(v, 1.5);
}

TEST(TransposedConv3d, ZeroInputGivesBroadcastBias) {
  const ConvSpec spec = conv_spec(2, 3, {1, 4, 4}, {1, 2, 2}, {0, 1, 1}, true);
  Rng rng(7);
  const Tensor bias = Tensor::from({0.5, -1.0, 2.0});
  const Tensor y = transposed_conv3d(Tensor({1, 2, 2, 3, 3}), random_tensor(spec.transposed_weight_shape(), rng),
                                     &bias, spec);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 2, 6, 6}));
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], bias[i / 72]);
}

TEST(TransposedConv3dProperty, MatchesScatterOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const Extent3 k{pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)};
    const ConvSpec spec = conv_spec(pick(rng, 1, 3), pick(rng, 1, 3), k, {pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 2)},
                                    {0, k.h > 2 ? pick(rng, 0, 1) : 0, k.w > 2 ? pick(rng, 0, 1) : 0},
                                    rng.uniform() < 0.5);
    const Tensor x = random_tensor({pick(rng, 1, 2), spec.in_channels, pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)}, rng);
    const Tensor w = random_tensor(spec.transposed_weight_shape(), rng);
    const Tensor b = random_tensor({spec.out_channels}, rng);
    const Tensor* bias = spec.bias ? &b : nullptr;
    ASSERT_LE(max_abs_diff(transposed_conv3d(x, w, bias, spec), brute_transposed_conv3d(x, w, bias, spec)), 1e-12);
  }
}

TEST(TransposedConv3dProperty, IsTheAdjointOfConv3d) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const ConvSpec spec = conv_spec(pick(rng, 1, 3), pick(rng, 1, 3), {pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)},
                                    {pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 2)},
                                    {pick(rng, 0, 1), pick(rng, 0, 1), pick(rng, 0, 1)});
    const Shape xs{pick(rng, 1, 2), spec.in_channels, pick(rng, 3, 5), pick(rng, 3, 6), pick(rng, 3, 6)};
    const Tensor x = random_tensor(xs, rng);
    const Tensor w = random_tensor(spec.weight_shape(), rng);
    const Tensor cx = conv3d(x, w, nullptr, spec);
    const Tensor y = random_tensor(cx.shape(), rng);
    // The transposed layer of `spec` maps out_channels back to in_channels.
    ConvSpec back = spec;
    std::swap(back.in_channels, back.out_channels);
    const Tensor ty = conv3d_backward_input(y, w, xs, spec);
    ASSERT_NEAR(dot(cx, y), dot(x, ty), 1e-10);
    // Where the geometry is exact, transposed_conv3d itself produces x's shape.
    if (back.transposed_output_extent(spatial_extent(cx.shape())) == spatial_extent(xs)) {
      const Tensor t2 = transposed_conv3d(y, w, nullptr, back);
      ASSERT_NEAR(dot(cx, y), dot(x, t2), 1e-10);
    }
  }
}

TEST(ConvShapeAlgebra, MirroredTransposedConvRestoresDims) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const Extent3 k{pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)};
    const Extent3 s{pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 2)};
    const Extent3 p{k.t > 1 ? pick(rng, 0, 1) : 0, k.h > 1 ? pick(rng, 0, 1) : 0, k.w > 1 ? pick(rng, 0, 1) : 0};
    const ConvSpec spec = conv_spec(1, 1, k, s, p);
    // Inputs with (in + 2p - k) divisible by s are exactly invertible in shape.
    const Extent3 out{pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 4)};
    const Extent3 in{(out.t - 1) * s.t + k.t - 2 * p.t, (out.h - 1) * s.h + k.h - 2 * p.h,
                     (out.w - 1) * s.w + k.w - 2 * p.w};
    if (in.t < 1 || in.h < 1 || in.w < 1 || in.t > 100 || in.h > 100 || in.w > 100) continue;
    ASSERT_EQ(spec.output_extent(in), out);
    ASSERT_EQ(spec.transposed_output_extent(spec.output_extent(in)), in);
  }
}

// ---------------------------------------------------------------------------
// pooling

TEST(MaxPool, UniqueMaxAndItsSwitch) {
  Tensor x({1, 1, 2, 2, 2});
  for (std::size_t i = 0; i < 8; ++i) x[i] = static_cast<double>(i + 1);
  auto [y, s] = maxpool3d_with_switches(x, PoolSpec{{2, 2, 2}, {2, 2, 2}});
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1, 1}));
  EXPECT_EQ(y[0], 8.0);
  EXPECT_EQ(s.index, (std::vector<std::int64_t>{7}));
}

TEST(MaxPool, TiesResolveToFirstInScanOrder) {
  auto [y, s] = maxpool3d_with_switches(Tensor({1, 1, 2, 2, 2}, 4.0), PoolSpec{{2, 2, 2}});
  EXPECT_EQ(y[0], 4.0);
  EXPECT_EQ(s.index[0], 0);
}

TEST(MaxPool, MatchesExhaustiveWindowScan) {
  Rng rng(11);
  const Tensor x = random_tensor({1, 2, 4, 6, 6}, rng);
  auto [y, s] = maxpool3d_with_switches(x, PoolSpec{{2, 2, 2}});
  const testing::BrutePool oracle = brute_maxpool(x, {2, 2, 2}, {2, 2, 2});
  EXPECT_TRUE(bit_equal(y, oracle.values));
  EXPECT_EQ(s.index, oracle.index);
}

TEST(MaxPoolProperty, SwitchesStayInsideTheirWindows) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const Extent3 k{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
    const Extent3 st{pick(rng, 1, k.t), pick(rng, 1, k.h), pick(rng, 1, k.w)};
    const Tensor x = random_tensor({pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, k.t, 5), pick(rng, k.h, 6), pick(rng, k.w, 6)}, rng);
    auto [y, s] = maxpool3d_with_switches(x, PoolSpec{k, st});
    const testing::BrutePool oracle = brute_maxpool(x, k, st);
    ASSERT_TRUE(bit_equal(y, oracle.values));
    ASSERT_EQ(s.index, oracle.index);
    for (std::size_t i = 0; i < s.index.size(); ++i) {
      const std::vector<std::size_t> out = y.unflatten(i);
      const std::vector<std::size_t> src = x.unflatten(static_cast<std::size_t>(s.index[i]));
      ASSERT_EQ(out[0], src[0]);
      ASSERT_EQ(out[1], src[1]);
      const std::size_t stride[3] = {st.t, st.h, st.w}, kernel[3] = {k.t, k.h, k.w};
      for (int a = 0; a < 3; ++a) {
        ASSERT_GE(src[2 + a], out[2 + a] * stride[a]);
        ASSERT_LT(src[2 + a], out[2 + a] * stride[a] + kernel[a]);
      }
    }
  }
}

TEST(MaxPool, RejectsWindowLargerThanInput) {
  EXPECT_THROW(maxpool3d_with_switches(Tensor({1, 1, 1, 2, 2}), PoolSpec{{2, 2, 2}}), ShapeError);
}

TEST(MaxUnpool, SingleScatter) {
  Switches s{{1, 1, 1, 1, 1}, {1, 1, 1, 2, 2}, {2}};  // flat index of (h=1, w=0)
  const Tensor y = maxunpool3d(Tensor({1, 1, 1, 1, 1}, 5.0), s);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 2, 2}));
  EXPECT_EQ(y.data()[2], 5.0);
  EXPECT_EQ(sum(y), 5.0);
}

TEST(MaxUnpool, UnpoolOfPoolPlacesMaximaAtTheirOrigins) {
  Rng rng(13);
  const Tensor x = distinct_tensor({1, 2, 2, 4, 4}, rng);
  auto [y, s] = maxpool3d_with_switches(x, PoolSpec{{1, 2, 2}});
  const Tensor u = maxunpool3d(y, s);
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < u.numel(); ++i) {
    if (u[i] != 0.0) {
      ++nonzero;
      EXPECT_EQ(u[i], x[i]);
    }
  }
  EXPECT_LE(nonzero, y.numel());
}

TEST(MaxUnpool, RejectsCorruptSwitches) {
  Switches s{{1, 1, 1, 1, 1}, {1, 1, 1, 2, 2}, {4}};
  EXPECT_THROW(maxunpool3d(Tensor({1, 1, 1, 1, 1}, 1.0), s), std::invalid_argument);
  Switches bad_shape{{1, 1, 1, 1, 2}, {1, 1, 1, 2, 2}, {0, 1}};
  EXPECT_THROW(maxunpool3d(Tensor({1, 1, 1, 1, 1}, 1.0), bad_shape), ShapeError);
}

TEST(PoolUnpoolProperty, PoolOfUnpoolIsIdentity) {
  Rng rng(14);
  for (int trial = 0; trial < 200; ++trial) {
    const Extent3 k{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3)};
    const Shape ys{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
    const Shape src{ys[0], ys[1], ys[2] * k.t, ys[3] * k.h, ys[4] * k.w};
    Switches s{ys, src, {}};
    const Tensor probe(ys);
    for (std::size_t i = 0; i < probe.numel(); ++i) {
      const std::vector<std::size_t> o = probe.unflatten(i);
      const std::size_t t = o[2] * k.t + rng.below(k.t), h = o[3] * k.h + rng.below(k.h), w = o[4] * k.w + rng.below(k.w);
      s.index.push_back(static_cast<std::int64_t>((((o[0] * src[1] + o[1]) * src[2] + t) * src[3] + h) * src[4] + w));
    }
    // Strictly positive values: the zeros unpooling writes never win a window.
    const Tensor y = random_tensor(ys, rng, 0.1, 2.0);
    auto [back, unused] = maxpool3d_with_switches(maxunpool3d(y, s), PoolSpec{k});
    ASSERT_TRUE(bit_equal(back, y));
  }
}

// ---------------------------------------------------------------------------
// auxiliary pooling

TEST(AuxPoolPair, TwoByTwoByTwoExample) {
  // Temporal max of t=0 {1, 7, 3, 2} and t=1 {5, 4, 6, 8} is {5, 7, 6, 8}; the
  // spatial max over that 1x2x2 map is 8 at (h=1, w=1).
  const Tensor z({1, 1, 2, 2, 2}, std::vector<double>{1, 7, 3, 2, 5, 4, 6, 8});
  const Switches s = aux_pool_pair(z, 2, 2, 2);
  EXPECT_EQ(s.shape, (Shape{1, 1, 1, 1, 1}));
  EXPECT_EQ(s.source_shape, (Shape{1, 1, 1, 2, 2}));
  EXPECT_EQ(s.index, (std::vector<std::int64_t>{3}));
  const Tensor u = maxunpool3d(Tensor({1, 1, 1, 1, 1}, 9.0), s);
  EXPECT_EQ(u.shape(), (Shape{1, 1, 1, 2, 2}));
  EXPECT_EQ(u[3], 9.0);
}

TEST(AuxPoolPair, UnitTemporalFactorIsPlainSpatialPooling) {
  Rng rng(15);
  const Tensor z = random_tensor({1, 2, 3, 4, 4}, rng);
  EXPECT_EQ(aux_pool_pair(z, 1, 2, 2).index, maxpool3d_with_switches(z, PoolSpec{{1, 2, 2}}).second.index);
}

TEST(AuxPoolPairProperty, EqualsTwoStagePoolingComposition) {
  Rng rng(16);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = pick(rng, 1, 4);
    const std::size_t ah = pick(rng, 1, 2), aw = pick(rng, 1, 2);
    const Tensor z = random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), k * pick(rng, 1, 2), ah * pick(rng, 1, 3), aw * pick(rng, 1, 3)}, rng);
    const Tensor p = maxpool3d_with_switches(z, PoolSpec{{k, 1, 1}, {k, 1, 1}}).first;
    const Switches expected = maxpool3d_with_switches(p, PoolSpec{{1, ah, aw}, {1, ah, aw}}).second;
    const Switches s = aux_pool_pair(z, k, ah, aw);
    ASSERT_EQ(s.shape, expected.shape);
    ASSERT_EQ(s.source_shape, expected.source_shape);
    ASSERT_EQ(s.index, expected.index);
  }
}

TEST(AuxPoolPair, DivisibilityErrorListsDimsAndFactors) {
  try {
    aux_pool_pair(Tensor({1, 1, 3, 4, 4}), 2, 2, 2);
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("T=3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("temporal=2"), std::string::npos) << msg;
  }
}

// ---------------------------------------------------------------------------
// batchnorm

TEST(BatchNorm, TrainModeStandardizesEachChannel) {
  Rng rng(17);
  const Tensor x = random_tensor({2, 3, 2, 3, 4}, rng, -3.0, 5.0);
  BatchNormState state(3);
  const BatchNormForward f = batchnorm(x, Tensor::ones({3}), Tensor::zeros({3}), state, Mode::train);
  const std::size_t per = 2 * 3 * 4;
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0.0, v = 0.0, xm = 0.0, xv = 0.0;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < per; ++i) {
        m += f.output[(b * 3 + c) * per + i];
        xm += x[(b * 3 + c) * per + i];
      }
    m /= 2 * per;
    xm /= 2 * per;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < per; ++i) {
        v += std::pow(f.output[(b * 3 + c) * per + i] - m, 2);
        xv += std::pow(x[(b * 3 + c) * per + i] - xm, 2);
      }
    v /= 2 * per;
    xv /= 2 * per;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, xv / (xv + state.eps), 1e-12);  // the eps floor
  }
}

TEST(BatchNorm, ConstantChannelGivesBeta) {
  BatchNormState state(1);
  const BatchNormForward f =
      batchnorm(Tensor({1, 1, 2, 2, 2}, 3.0), Tensor::from({2.0}), Tensor::from({0.25}), state, Mode::train);
  for (double v : f.output.data()) EXPECT_EQ(v, 0.25);
}

TEST(BatchNorm, EvalModeUsesRunningStatistics) {
  BatchNormState state(1);
  state.running_mean = Tensor::from({0.5});
  state.running_var = Tensor::from({4.0});
  const Tensor x({1, 1, 1, 2, 2}, std::vector<double>{1.0, 2.0, -1.0, 0.5});
  const BatchNormForward f = batchnorm(x, Tensor::from({3.0}), Tensor::from({-1.0}), state, Mode::eval);
  const double inv = 1.0 / std::sqrt(4.0 + 1e-3);
  EXPECT_NEAR(f.output[0], (1.0 - 0.5) * inv * 3.0 - 1.0, 1e-15);
  EXPECT_NEAR(f.output[1], (2.0 - 0.5) * inv * 3.0 - 1.0, 1e-15);
  EXPECT_NEAR(f.output[2], (-1.0 - 0.5) * inv * 3.0 - 1.0, 1e-15);
  EXPECT_NEAR(f.output[3], (0.5 - 0.5) * inv * 3.0 - 1.0, 1e-15);
  EXPECT_EQ(state.running_mean[0], 0.5);
}

TEST(BatchNorm, TrainModeUpdatesRunningStatsWithMomentum) {
  BatchNormState state(1);
  const Tensor x({1, 1, 1, 1, 4}, std::vector<double>{1, 2, 3, 6});
  batchnorm(x, Tensor::ones({1}), Tensor::zeros({1}), state, Mode::train);
  // Batch mean 3, unbiased variance (4 + 1 + 0 + 9) / 3.
  EXPECT_NEAR(state.running_mean[0], 0.1 * 3.0, 1e-7);
  EXPECT_NEAR(state.running_var[0], 0.9 * 1.0 + 0.1 * 14.0 / 3.0, 1e-6);
}

TEST(BatchNorm, RejectsChannelMismatch) {
  BatchNormState state(2);
  EXPECT_THROW(batchnorm(Tensor({1, 3, 1, 2, 2}), Tensor::ones({2}), Tensor::zeros({2}), state, Mode::train),
               ShapeError);
}

// ---------------------------------------------------------------------------
// activations and interpolation

TEST(Activations, ReluAndSigmoidExamples) {
  const Tensor r = relu(Tensor::from({-1.0, 0.0, 2.0}));
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], 0.0);
  EXPECT_EQ(r[2], 2.0);
  EXPECT_EQ(sigmoid(Tensor::from({0.0}))[0], 0.5);
  const Tensor s = sigmoid(Tensor::from({-800.0, 800.0}));
  EXPECT_GE(s[0], 0.0);
  EXPECT_LE(s[1], 1.0);
  EXPECT_TRUE(std::isfinite(s[0]) && std::isfinite(s[1]));
}

TEST(Trilinear, ConstantStaysConstantAndUnitScaleIsIdentity) {
  const Tensor c = trilinear_upsample(Tensor({1, 2, 2, 2, 3}, 1.25), {2, 3, 2});
  EXPECT_EQ(c.shape(), (Shape{1, 2, 4, 6, 6}));
  for (double v : c.data()) EXPECT_NEAR(v, 1.25, 1e-15);
  Rng rng(18);
  const Tensor x = random_tensor({1, 1, 2, 3, 4}, rng);
  EXPECT_TRUE(bit_equal(trilinear_upsample(x, {1, 1, 1}), x));
}

TEST(Trilinear, AlignCornersPositions) {
  const Tensor y = trilinear_upsample(Tensor({1, 1, 1, 1, 2}, std::vector<double>{0.0, 2.0}), {1, 1, 2});
  ASSERT_EQ(y.numel(), 4u);
  EXPECT_NEAR(y[0], 0.0, 1e-15);
  EXPECT_NEAR(y[1], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(y[2], 4.0 / 3.0, 1e-15);
  EXPECT_NEAR(y[3], 2.0, 1e-15);
}

}  // namespace
}  // namespace tased
