#include <gtest/gtest.h>

#include <numeric>

#include "oracles.hpp"
#include "tased/infer.hpp"

namespace tased {
namespace {

using testing::random_tensor;

std::vector<std::size_t> range(std::size_t from, std::size_t to) {  // inclusive, either direction
  std::vector<std::size_t> r;
  if (from <= to) {
    for (std::size_t i = from; i <= to; ++i) r.push_back(i);
  } else {
    for (std::size_t i = from + 1; i-- > to;) r.push_back(i);
  }
  return r;
}

TEST(PlanWindows, SixtyThreeFramesOfThirtyTwo) {
  const std::vector<Window> w = plan_windows(63, 32);
  ASSERT_EQ(w.size(), 63u);
  EXPECT_EQ(w[0], (Window{range(31, 0), true}));    // frame 1 predicted from frames 32..1
  EXPECT_EQ(w[30], (Window{range(61, 30), true}));  // frame 31 from 62..31
  EXPECT_EQ(w[31], (Window{range(0, 31), false}));  // frame 32 from 1..32
  EXPECT_EQ(w[62], (Window{range(31, 62), false}));
}

TEST(PlanWindows, SevenFramesOfFour) {
  const std::vector<Window> w = plan_windows(7, 4);
  EXPECT_EQ(w[0].frames, (std::vector<std::size_t>{3, 2, 1, 0}));
  EXPECT_EQ(w[2].frames, (std::vector<std::size_t>{5, 4, 3, 2}));
  EXPECT_EQ(w[3].frames, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(w[6].frames, (std::vector<std::size_t>{3, 4, 5, 6}));
}

TEST(PlanWindows, SingleFrameClipsAndTooShortVideos) {
  const std::vector<Window> w = plan_windows(3, 1);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(w[t], (Window{{t}, false}));
  EXPECT_THROW(plan_windows(62, 32), std::invalid_argument);
}

TEST(PlanWindowsProperty, EveryWindowIsAFullClipEndingOnItsFrame) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t T = 1 + rng.below(40);
    const std::size_t N = 2 * T - 1 + rng.below(60);
    const std::vector<Window> windows = plan_windows(N, T);
    ASSERT_EQ(windows.size(), N);
    for (std::size_t t = 0; t < N; ++t) {
      const Window& w = windows[t];
      ASSERT_EQ(w.frames.size(), T);
      ASSERT_EQ(w.frames.back(), t);
      for (std::size_t i = 1; i < T; ++i) {
        const std::size_t step = w.reversed ? w.frames[i - 1] - w.frames[i] : w.frames[i] - w.frames[i - 1];
        ASSERT_EQ(step, 1u);
      }
      for (std::size_t f : w.frames) ASSERT_LT(f, N);
    }
  }
}

TEST(LoopIndices, Examples) {
  EXPECT_EQ(loop_indices(5, 4), (std::vector<std::size_t>{0, 1, 2, 3, 4, 0, 1}));
  EXPECT_EQ(loop_indices(1, 4), std::vector<std::size_t>(7, 0));
  EXPECT_EQ(loop_indices(10, 4), range(0, 9));
  EXPECT_THROW(loop_indices(0, 4), std::invalid_argument);
}

TEST(StackWindows, LaysFramesAlongTime) {
  Rng rng(2);
  std::vector<Tensor> frames;
  for (int i = 0; i < 3; ++i) frames.push_back(random_tensor({3, 2, 2}, rng));
  const Tensor b = stack_windows(frames, {Window{{2, 1}, true}});
  ASSERT_EQ(b.shape(), (Shape{1, 3, 2, 2, 2}));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(b[(c * 2 + 0) * 4 + i], frames[2][c * 4 + i]);
      EXPECT_EQ(b[(c * 2 + 1) * 4 + i], frames[1][c * 4 + i]);
    }
}

class PredictVideoTest : public ::testing::Test {
 protected:
  PredictVideoTest() : net_(ModelConfig::tiny(4)) {}

  std::vector<Tensor> video(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor> frames;
    for (std::size_t i = 0; i < n; ++i) frames.push_back(random_tensor({3, 32, 64}, rng));
    return frames;
  }

  Network net_;
};

TEST_F(PredictVideoTest, OneMapPerFrame) {
  for (std::size_t n : {1, 5, 9}) {
    const std::vector<Tensor> maps = predict_video(net_, video(n, n));
    ASSERT_EQ(maps.size(), n);
    for (const Tensor& m : maps) EXPECT_EQ(m.shape(), (Shape{32, 64}));
  }
}

TEST_F(PredictVideoTest, ShortVideoEqualsPrefixOfLoopedVideo) {
  const std::vector<Tensor> frames = video(5, 3);
  const std::vector<Tensor> looped = predict_video(net_, loop_video(frames, 4));
  const std::vector<Tensor> maps = predict_video(net_, frames);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_TRUE(bit_equal(maps[i], looped[i])) << i;
}

TEST_F(PredictVideoTest, WindowOrderDoesNotMatter) {
  const std::vector<Tensor> frames = video(9, 4);
  const std::vector<Tensor> ref = predict_video(net_, frames);
  PredictOptions opt;
  opt.order.resize(9);
  std::iota(opt.order.begin(), opt.order.end(), 0);
  Rng rng(5);
  for (std::size_t i = 8; i > 0; --i) std::swap(opt.order[i], opt.order[rng.below(i + 1)]);
  const std::vector<Tensor> shuffled = predict_video(net_, frames, opt);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_TRUE(bit_equal(ref[i], shuffled[i])) << i;
}

TEST_F(PredictVideoTest, BatchSizeDoesNotChangeResults) {
  const std::vector<Tensor> frames = video(8, 6);
  PredictOptions one, three;
  one.batch = 1;
  three.batch = 3;
  const std::vector<Tensor> a = predict_video(net_, frames, one);
  const std::vector<Tensor> b = predict_video(net_, frames, three);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_LE(max_abs_diff(a[i], b[i]), 1e-12) << i;
}

TEST_F(PredictVideoTest, MatchesDirectNetworkCallOnEachWindow) {
  const std::vector<Tensor> frames = video(7, 7);
  const std::vector<Tensor> maps = predict_video(net_, frames);
  const std::vector<Window> windows = plan_windows(7, 4);
  for (std::size_t t : {0u, 3u, 6u}) {
    const Tensor y = net_.predict(stack_windows(frames, {windows[t]}));
    EXPECT_LE(max_abs_diff(y.reshaped({32, 64}), maps[t]), 1e-12);
  }
}

TEST_F(PredictVideoTest, ConstantVideoGivesIdenticalMaps) {
  const std::vector<Tensor> frames(6, Tensor({3, 32, 64}, 0.3));
  const std::vector<Tensor> maps = predict_video(net_, frames);
  for (const Tensor& m : maps) EXPECT_TRUE(bit_equal(m, maps[0]));
}

}  // namespace
}  // namespace tased
