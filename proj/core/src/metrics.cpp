#include "tased/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "tased/error.hpp"

namespace tased {

namespace {

void require_map(const Tensor& s, const char* what) {
  if (s.rank() != 2) throw ShapeError(fmt::format("{}: expected an (H, W) map, got {}", what, shape_str(s.shape())));
}

std::vector<double> values_at(const Tensor& s, const std::vector<Fixation>& points, const char* what) {
  const std::size_t H = s.dim(0);
  const std::size_t W = s.dim(1);
  std::vector<double> v;
  v.reserve(points.size());
  for (const Fixation& f : points) {
    if (f.row >= H || f.col >= W) {
      throw std::invalid_argument(fmt::format("{}: fixation ({}, {}) outside a {}x{} map", what, f.row, f.col, H, W));
    }
    v.push_back(s[f.row * W + f.col]);
  }
  return v;
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

std::vector<Fixation> unique_fixations(const std::vector<Fixation>& points) {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const Fixation& f : points) seen.emplace(f.row, f.col);
  std::vector<Fixation> out;
  out.reserve(seen.size());
  for (const auto& [r, c] : seen) out.push_back({r, c});
  return out;
}

double nss(const Tensor& s, const std::vector<Fixation>& fixations, bool* degenerate) {
  require_map(s, "nss");
  if (degenerate) *degenerate = false;
  const std::vector<Fixation> points = unique_fixations(fixations);
  if (points.empty()) throw std::invalid_argument("nss: no fixations");
  const std::vector<double> at = values_at(s, points, "nss");
  const double n = static_cast<double>(s.numel());
  double mean = 0.0;
  for (double v : s.data()) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : s.data()) var += (v - mean) * (v - mean);
  var /= n;
  if (!(var > 0.0)) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  const double sd = std::sqrt(var);
  double total = 0.0;
  for (double v : at) total += (v - mean) / sd;
  return total / static_cast<double>(at.size());
}

double cc(const Tensor& s, const Tensor& g, bool* degenerate) {
  require_map(s, "cc");
  if (s.shape() != g.shape()) {
    throw ShapeError(fmt::format("cc: maps {} and {} differ", shape_str(s.shape()), shape_str(g.shape())));
  }
  if (degenerate) *degenerate = false;
  const double n = static_cast<double>(s.numel());
  double ms = 0.0, mg = 0.0;
  for (std::size_t i = 0; i < s.numel(); ++i) {
    ms += s[i];
    mg += g[i];
  }
  ms /= n;
  mg /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < s.numel(); ++i) {
    const double a = s[i] - ms;
    const double b = g[i] - mg;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return sxy / std::sqrt(sxx * syy);
}

double sim(const Tensor& s, const Tensor& g) {
  require_map(s, "sim");
  if (s.shape() != g.shape()) {
    throw ShapeError(fmt::format("sim: maps {} and {} differ", shape_str(s.shape()), shape_str(g.shape())));
  }
  double ss = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < s.numel(); ++i) {
    if (s[i] < 0.0 || g[i] < 0.0) throw std::invalid_argument("sim: maps must be nonnegative");
    ss += s[i];
    sg += g[i];
  }
  if (!(ss > 0.0) || !(sg > 0.0)) throw std::invalid_argument("sim: maps must have a positive sum");
  double total = 0.0;
  for (std::size_t i = 0; i < s.numel(); ++i) total += std::min(s[i] / ss, g[i] / sg);
  return total;
}

double pairwise_auc(std::vector<double> positives, std::vector<double> negatives) {
  if (positives.empty() || negatives.empty()) throw std::invalid_argument("pairwise_auc: empty sample");
  std::sort(positives.begin(), positives.end());
  std::sort(negatives.begin(), negatives.end());
  // For each positive: negatives strictly below plus half the ties.
  double wins = 0.0;
  std::size_t below = 0;
  std::size_t upto = 0;
  for (double p : positives) {
    while (below < negatives.size() && negatives[below] < p) ++below;
    if (upto < below) upto = below;
    while (upto < negatives.size() && negatives[upto] <= p) ++upto;
    wins += static_cast<double>(below) + 0.5 * static_cast<double>(upto - below);
  }
  return wins / (static_cast<double>(positives.size()) * static_cast<double>(negatives.size()));
}

double auc_judd(const Tensor& s, const std::vector<Fixation>& fixations) {
  require_map(s, "auc_judd");
  const std::vector<Fixation> points = unique_fixations(fixations);
  if (points.empty()) throw std::invalid_argument("auc_judd: no fixations");
  if (points.size() >= s.numel()) throw std::invalid_argument("auc_judd: needs fewer fixations than pixels");
  std::vector<double> pos = values_at(s, points, "auc_judd");
  std::vector<double> all(s.data().begin(), s.data().end());
  std::sort(pos.begin(), pos.end(), std::greater<>());
  std::sort(all.begin(), all.end(), std::greater<>());

  // Sweep thresholds over the distinct values, high to low. Each step moves
  // to (fp, tp) = fractions of pixels / positives at or above the threshold.
  const double np = static_cast<double>(pos.size());
  const double na = static_cast<double>(all.size());
  double area = 0.0;
  double tp_prev = 0.0, fp_prev = 0.0;
  std::size_t ip = 0, ia = 0;
  while (ia < all.size()) {
    const double theta = all[ia];
    while (ia < all.size() && all[ia] >= theta) ++ia;
    while (ip < pos.size() && pos[ip] >= theta) ++ip;
    const double tp = static_cast<double>(ip) / np;
    const double fp = static_cast<double>(ia) / na;
    area += (fp - fp_prev) * (tp + tp_prev) / 2.0;
    tp_prev = tp;
    fp_prev = fp;
  }
  return area;
}

double shuffled_auc(const Tensor& s, const std::vector<Fixation>& fixations, const std::vector<Fixation>& pool,
                    std::size_t splits, Rng& rng) {
  require_map(s, "shuffled_auc");
  if (splits == 0) throw std::invalid_argument("shuffled_auc: splits must be >= 1");
  const std::vector<Fixation> points = unique_fixations(fixations);
  if (points.empty()) throw std::invalid_argument("shuffled_auc: no fixations");
  const std::vector<double> pos = values_at(s, points, "shuffled_auc");
  std::set<std::pair<std::size_t, std::size_t>> positive_pixels;
  for (const Fixation& f : points) positive_pixels.emplace(f.row, f.col);
  std::vector<Fixation> candidates;
  for (const Fixation& f : pool) {
    if (!positive_pixels.count({f.row, f.col})) candidates.push_back(f);
  }
  if (candidates.empty()) throw std::invalid_argument("shuffled_auc: negative pool is empty after excluding positives");
  const std::vector<double> cand = values_at(s, candidates, "shuffled_auc");
  const std::size_t k = pos.size();
  double total = 0.0;
  for (std::size_t split = 0; split < splits; ++split) {
    std::vector<double> neg;
    neg.reserve(k);
    if (cand.size() >= k) {
      for (std::size_t i : rng.sample_without_replacement(cand.size(), k)) neg.push_back(cand[i]);
    } else {
      for (std::size_t i = 0; i < k; ++i) neg.push_back(cand[rng.below(cand.size())]);
    }
    total += pairwise_auc(pos, std::move(neg));
  }
  return total / static_cast<double>(splits);
}

VideoReport evaluate_video(const std::string& video, const std::vector<Tensor>& predictions,
                           const std::vector<FixationRecord>& records, const EvalOptions& options) {
  if (predictions.size() != records.size()) {
    throw std::invalid_argument(fmt::format("video '{}': {} predictions for {} ground-truth frames", video,
                                            predictions.size(), records.size()));
  }
  VideoReport report;
  report.video = video;
  report.frames.resize(predictions.size());
  const MetricSet& m = options.metrics;
  for (std::size_t t = 0; t < predictions.size(); ++t) {
    const Tensor& s = predictions[t];
    const FixationRecord& r = records[t];
    require_map(s, "evaluate_video");
    if (s.shape() != Shape{r.height, r.width}) {
      throw ShapeError(fmt::format("video '{}' frame {}: prediction {} vs ground truth {}x{}", video, t + 1,
                                   shape_str(s.shape()), r.height, r.width));
    }
    FrameScores& f = report.frames[t];
    f.frame = t + 1;
    f.nss = f.cc = f.sim = f.aucj = f.sauc = nan();
    const bool has_points = !r.points.empty();
    if (m.nss && has_points) f.nss = nss(s, r.points, &f.nss_degenerate);
    if (m.aucj && has_points) f.aucj = auc_judd(s, r.points);
    if (m.sauc && has_points) {
      Rng rng(derive_seed(derive_seed(options.seed, options.video_index), t));
      f.sauc = shuffled_auc(s, r.points, options.sauc_pool, options.sauc_splits, rng);
    }
    if (m.cc || m.sim) {
      Tensor density;
      if (r.density) {
        density = *r.density;
      } else if (has_points) {
        density = density_from_fixations(r.points, r.height, r.width, default_sigma(r.width));
      }
      if (!density.empty()) {
        if (m.cc) f.cc = cc(s, density, &f.cc_degenerate);
        if (m.sim) f.sim = sim(s, density);
      }
    }
  }
  auto mean_of = [&](double FrameScores::*field) {
    double total = 0.0;
    std::size_t n = 0;
    for (const FrameScores& f : report.frames) {
      if (!std::isnan(f.*field)) {
        total += f.*field;
        ++n;
      }
    }
    return n == 0 ? nan() : total / static_cast<double>(n);
  };
  report.mean = {mean_of(&FrameScores::nss), mean_of(&FrameScores::cc), mean_of(&FrameScores::sim),
                 mean_of(&FrameScores::aucj), mean_of(&FrameScores::sauc)};
  return report;
}

MetricMeans dataset_mean(const std::vector<VideoReport>& reports) {
  auto mean_of = [&](double MetricMeans::*field) {
    double total = 0.0;
    std::size_t n = 0;
    for (const VideoReport& r : reports) {
      if (!std::isnan(r.mean.*field)) {
        total += r.mean.*field;
        ++n;
      }
    }
    return n == 0 ? nan() : total / static_cast<double>(n);
  };
  return {mean_of(&MetricMeans::nss), mean_of(&MetricMeans::cc), mean_of(&MetricMeans::sim),
          mean_of(&MetricMeans::aucj), mean_of(&MetricMeans::sauc)};
}

std::string format_metrics_csv(const std::vector<VideoReport>& reports) {
  std::string out = "video,frame,nss,cc,sim,aucj,sauc\n";
  for (const VideoReport& r : reports) {
    for (const FrameScores& f : r.frames) {
      out += fmt::format("{},{},{:.9f},{:.9f},{:.9f},{:.9f},{:.9f}\n", r.video, f.frame, f.nss, f.cc, f.sim, f.aucj,
                         f.sauc);
    }
  }
  return out;
}

}  // namespace tased
