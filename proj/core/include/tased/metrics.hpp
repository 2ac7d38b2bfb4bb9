#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tased/data.hpp"
#include "tased/rng.hpp"
#include "tased/tensor.hpp"

namespace tased {

/// Distinct fixation pixels in row-major order (a binary fixation map).
std::vector<Fixation> unique_fixations(const std::vector<Fixation>& points);

/// Mean z-scored saliency (population std) over the distinct fixation
/// pixels. A zero-variance map scores 0 and sets *degenerate.
/// Throws std::invalid_argument without fixations.
double nss(const Tensor& saliency, const std::vector<Fixation>& fixations, bool* degenerate = nullptr);

/// Pearson correlation over pixels; 0 (and *degenerate) if either map is
/// constant.
double cc(const Tensor& saliency, const Tensor& density, bool* degenerate = nullptr);

/// Histogram intersection of the two maps normalized to sum 1. Throws for
/// negative values or a zero sum.
double sim(const Tensor& saliency, const Tensor& density);

/// P(positive > negative) + P(tie) / 2 over all pairs, computed by sorting.
double pairwise_auc(std::vector<double> positives, std::vector<double> negatives);

/// ROC area with the saliency values at the distinct fixation pixels as
/// positives and all pixels as the false-positive base. Thresholds sweep
/// every distinct map value (trapezoidal rule), which makes the result equal
/// to pairwise_auc(positives, all pixels).
double auc_judd(const Tensor& saliency, const std::vector<Fixation>& fixations);

/// Mean over `splits` of pairwise_auc(positives, negatives), negatives drawn
/// from `pool` minus the positive pixels: as many as there are positives,
/// without replacement when the pool is large enough. Throws if the pool is
/// empty after exclusion.
double shuffled_auc(const Tensor& saliency, const std::vector<Fixation>& fixations,
                    const std::vector<Fixation>& pool, std::size_t splits, Rng& rng);

struct MetricSet {
  bool nss = true;
  bool cc = true;
  bool sim = true;
  bool aucj = true;
  bool sauc = true;
};

struct FrameScores {
  std::size_t frame = 0;  // 1-based
  double nss = 0.0;
  double cc = 0.0;
  double sim = 0.0;
  double aucj = 0.0;
  double sauc = 0.0;
  bool nss_degenerate = false;
  bool cc_degenerate = false;
};

struct MetricMeans {
  double nss = 0.0;
  double cc = 0.0;
  double sim = 0.0;
  double aucj = 0.0;
  double sauc = 0.0;
};

struct VideoReport {
  std::string video;
  std::vector<FrameScores> frames;
  MetricMeans mean;
};

struct EvalOptions {
  MetricSet metrics;
  /// Negative pool for s-AUC in frame coordinates of the evaluated video.
  std::vector<Fixation> sauc_pool;
  std::size_t sauc_splits = 100;
  std::uint64_t seed = 0;
  /// Mixed into per-frame s-AUC seeds so videos draw independent samples.
  std::uint64_t video_index = 0;
};

/// Per-frame scores and their means. Disabled metrics score NaN. Records
/// without a density map use density_from_fixations (sigma = W / 20) for CC
/// and SIM. Throws std::invalid_argument when the counts differ.
VideoReport evaluate_video(const std::string& video, const std::vector<Tensor>& predictions,
                           const std::vector<FixationRecord>& records, const EvalOptions& options = {});

/// Mean over videos of the per-video means.
MetricMeans dataset_mean(const std::vector<VideoReport>& reports);

/// "video,frame,nss,cc,sim,aucj,sauc" rows.
std::string format_metrics_csv(const std::vector<VideoReport>& reports);

}  // namespace tased
