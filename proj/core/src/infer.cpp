#include "tased/infer.hpp"

#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>

#include "tased/error.hpp"

namespace tased {

std::vector<Window> plan_windows(std::size_t N, std::size_t T) {
  if (T == 0) throw std::invalid_argument("plan_windows: T must be >= 1");
  if (N < 2 * T - 1) {
    throw std::invalid_argument(fmt::format(
        "plan_windows: a video of N={} frames is shorter than 2T-1={}; extend it with loop_video first", N,
        2 * T - 1));
  }
  std::vector<Window> plan(N);
  for (std::size_t t = 0; t < N; ++t) {
    Window& w = plan[t];
    w.frames.resize(T);
    if (t + 1 >= T) {
      for (std::size_t k = 0; k < T; ++k) w.frames[k] = t + 1 - T + k;
    } else {
      w.reversed = true;
      for (std::size_t k = 0; k < T; ++k) w.frames[k] = t + T - 1 - k;
    }
  }
  return plan;
}

std::vector<std::size_t> loop_indices(std::size_t N, std::size_t T) {
  if (N == 0) throw std::invalid_argument("loop_video: the video has no frames");
  const std::size_t length = std::max(N, 2 * T - 1);
  std::vector<std::size_t> idx(length);
  for (std::size_t i = 0; i < length; ++i) idx[i] = i % N;
  return idx;
}

Tensor stack_windows(const std::vector<Tensor>& frames, const std::vector<Window>& windows) {
  if (windows.empty() || frames.empty()) throw std::invalid_argument("stack_windows: nothing to stack");
  const Shape& fs = frames.front().shape();
  if (fs.size() != 3 || fs[0] != 3) {
    throw ShapeError(fmt::format("stack_windows: frames must be (3, H, W), got {}", shape_str(fs)));
  }
  const std::size_t T = windows.front().frames.size();
  const std::size_t plane = fs[1] * fs[2];
  Tensor out({windows.size(), 3, T, fs[1], fs[2]});
  for (std::size_t b = 0; b < windows.size(); ++b) {
    if (windows[b].frames.size() != T) throw ShapeError("stack_windows: windows of different lengths");
    for (std::size_t k = 0; k < T; ++k) {
      const Tensor& f = frames.at(windows[b].frames[k]);
      if (f.shape() != fs) throw ShapeError("stack_windows: frames of different sizes");
      for (std::size_t c = 0; c < 3; ++c) {
        std::copy_n(f.raw() + c * plane, plane, out.raw() + (((b * 3 + c) * T) + k) * plane);
      }
    }
  }
  return out;
}

std::vector<Tensor> predict_video(Network& net, const std::vector<Tensor>& frames, const PredictOptions& options) {
  const std::size_t N = frames.size();
  const std::size_t T = net.config().clip_length;
  const ModelConfig& cfg = net.config();
  for (const Tensor& f : frames) {
    if (f.shape() != Shape{3, cfg.height, cfg.width}) {
      throw ShapeError(fmt::format("predict_video: frame shape {} does not match the network input (3, {}, {})",
                                   shape_str(f.shape()), cfg.height, cfg.width));
    }
  }
  const std::vector<Tensor> looped = loop_video(frames, T);
  const std::vector<Window> plan = plan_windows(looped.size(), T);

  std::vector<std::size_t> order = options.order;
  if (order.empty()) {
    order.resize(N);
    for (std::size_t i = 0; i < N; ++i) order[i] = i;
  } else {
    std::vector<std::size_t> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      if (sorted.size() != N || sorted[i] != i) {
        throw std::invalid_argument("predict_video: order must be a permutation of the frame indices");
      }
    }
  }

  const std::size_t batch = std::max<std::size_t>(options.batch, 1);
  const std::size_t groups = (N + batch - 1) / batch;
  std::vector<Tensor> maps(N);
  const std::ptrdiff_t group_count = static_cast<std::ptrdiff_t>(groups);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t g = 0; g < group_count; ++g) {
    const std::size_t begin = static_cast<std::size_t>(g) * batch;
    const std::size_t end = std::min(N, begin + batch);
    std::vector<Window> windows;
    for (std::size_t i = begin; i < end; ++i) windows.push_back(plan[order[i]]);
    const Tensor pred = net.predict(stack_windows(looped, windows));
    const std::size_t H = pred.dim(2);
    const std::size_t W = pred.dim(3);
    for (std::size_t i = begin; i < end; ++i) {
      Tensor map({H, W});
      std::copy_n(pred.raw() + (i - begin) * H * W, H * W, map.raw());
      maps[order[i]] = std::move(map);
    }
  }
  return maps;
}

}  // namespace tased
