#pragma once

#include <cstddef>
#include <vector>

#include "tased/model.hpp"
#include "tased/tensor.hpp"

namespace tased {

/// Source frames (0-based, in clip order) of the window predicting one frame.
struct Window {
  std::vector<std::size_t> frames;
  bool reversed = false;

  friend bool operator==(const Window&, const Window&) = default;
};

/// One window per frame t = 0..N-1 (frame numbers t + 1 in 1-based terms):
/// for t >= T - 1 the ascending frames t-T+1..t; for t < T - 1 the
/// chronologically reversed frames t+T-1 down to t, so every frame is
/// predicted from a full clip that ends on it. Requires N >= 2T - 1
/// (throws std::invalid_argument otherwise; loop the video first).
std::vector<Window> plan_windows(std::size_t N, std::size_t T);

/// Frame indices of the video repeated cyclically from its first frame up
/// to length max(N, 2T - 1). Throws for N == 0.
std::vector<std::size_t> loop_indices(std::size_t N, std::size_t T);

template <typename Frame>
std::vector<Frame> loop_video(const std::vector<Frame>& frames, std::size_t T) {
  std::vector<Frame> out;
  for (std::size_t i : loop_indices(frames.size(), T)) out.push_back(frames[i]);
  return out;
}

/// (B, 3, T, H, W) batch stacking the given windows over (3, H, W) frames.
Tensor stack_windows(const std::vector<Tensor>& frames, const std::vector<Window>& windows);

struct PredictOptions {
  /// Windows per forward pass.
  std::size_t batch = 4;
  /// Optional evaluation order of the windows (a permutation of 0..N-1);
  /// results do not depend on it.
  std::vector<std::size_t> order;
};

/// Eval-mode saliency (H, W) for every frame of a video of preprocessed
/// (3, H, W) frames, looping short videos. Exactly N maps are returned.
std::vector<Tensor> predict_video(Network& net, const std::vector<Tensor>& frames,
                                  const PredictOptions& options = {});

}  // namespace tased
