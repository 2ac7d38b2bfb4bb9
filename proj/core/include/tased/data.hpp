#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tased/image.hpp"
#include "tased/tensor.hpp"

namespace tased {

struct Fixation {
  std::size_t row = 0;
  std::size_t col = 0;

  friend bool operator==(const Fixation&, const Fixation&) = default;
};

/// Ground truth for one frame.
struct FixationRecord {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Fixation> points;
  /// Continuous density map (H, W), when available.
  std::optional<Tensor> density;

  /// Throws IoError for out-of-bounds points or a density of the wrong shape
  /// or non-positive sum.
  void validate() const;
};

struct VideoSequence {
  std::string id;
  std::vector<Image> frames;  // RGB
  std::size_t height = 0;     // native size
  std::size_t width = 0;
  std::optional<double> fps;

  std::size_t size() const { return frames.size(); }
};

/// On-disk layout of one video:
///   <root>/<id>/frames/00001.png ...   8-bit RGB frames, numbered from 1
///   <root>/<id>/fixations.csv          "frame,row,col" (1-based frame, 0-based pixels)
///   <root>/<id>/maps/00001.png ...     optional 8-bit gray density maps
std::filesystem::path frame_path(const std::filesystem::path& video_dir, std::size_t frame_number);
std::filesystem::path map_path(const std::filesystem::path& video_dir, std::size_t frame_number);

/// Sorted video ids (subdirectories containing a frames/ directory).
std::vector<std::string> list_videos(const std::filesystem::path& root);

struct VideoInfo {
  std::string id;
  std::size_t frame_count = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Frame count (checked contiguous) and the size of the first frame,
/// without decoding the rest.
VideoInfo probe_video(const std::filesystem::path& video_dir);

/// Decodes frames/ in numeric order; errors name the offending path.
VideoSequence load_video(const std::filesystem::path& video_dir);

/// Per-frame records at native resolution from fixations.csv and, when
/// present, maps/. `frame_count` is the number of frames of the video.
std::vector<FixationRecord> load_annotations(const std::filesystem::path& video_dir, std::size_t frame_count,
                                             std::size_t height, std::size_t width);

/// Per-frame fixation lists from "frame,row,col" CSV text. `source` names the
/// file in error messages.
std::vector<std::vector<Fixation>> parse_fixations_csv(const std::string& text, std::size_t frame_count,
                                                       std::size_t height, std::size_t width,
                                                       const std::string& source);
std::string format_fixations_csv(const std::vector<std::vector<Fixation>>& per_frame);

/// Bilinear resize to (height, width) and x / 127.5 - 1: a (3, H, W) tensor
/// in [-1, 1].
Tensor preprocess(const Image& frame, std::size_t height, std::size_t width);

/// Sum of isotropic Gaussians at the fixations, each truncated at 4 sigma,
/// normalized to sum 1. Repeated points add mass.
Tensor density_from_fixations(const std::vector<Fixation>& points, std::size_t height, std::size_t width,
                              double sigma);
inline double default_sigma(std::size_t width) { return static_cast<double>(width) / 20.0; }

/// Maps a pixel coordinate at one resolution to another (pixel centers).
Fixation rescale_fixation(const Fixation& f, std::size_t from_h, std::size_t from_w, std::size_t to_h,
                          std::size_t to_w);

/// 8-bit gray image of a nonnegative (H, W) map: bilinear resize to the given
/// size, then round(255 * v / max). Constant maps (including all zero)
/// export as 255 everywhere.
Image quantize_map(const Tensor& map, std::size_t height, std::size_t width);
void export_saliency(const Tensor& map, const std::filesystem::path& path, std::size_t height,
                     std::size_t width);
/// (H, W) tensor in [0, 1] from an 8-bit gray PNG.
Tensor load_map(const std::filesystem::path& path);

struct SynthParams {
  std::size_t videos = 6;
  std::size_t frames = 70;
  std::size_t height = 32;
  std::size_t width = 64;
  std::size_t blobs = 1;
  std::size_t waypoints = 4;
  std::size_t fixations_per_frame = 8;
  /// Blob radius (Gaussian sigma) as a fraction of min(H, W).
  double blob_scale = 0.12;
  std::uint64_t seed = 0;
  bool write_maps = true;
};

/// Per-frame center of the first blob, used as the saliency ground truth.
struct SynthVideo {
  std::string id;
  std::vector<Fixation> centers;
};

/// Writes moving-blob videos in the DatasetLayout under `root`: a bright
/// Gaussian blob follows a seeded piecewise-linear path over a textured
/// background; fixations scatter around the blob center; the density map is
/// the Gaussian density of the center (sigma = W / 20).
std::vector<SynthVideo> synth_dataset(const std::filesystem::path& root, const SynthParams& params);

/// A dataset held in memory at the network's working resolution.
struct VideoSample {
  std::string id;
  std::size_t native_height = 0;
  std::size_t native_width = 0;
  std::vector<Tensor> frames;              // (3, H, W) in [-1, 1]
  std::vector<Tensor> targets;             // (H, W) density, nonnegative
  std::vector<FixationRecord> fixations;   // working resolution

  std::size_t size() const { return frames.size(); }
};

struct Dataset {
  std::vector<VideoSample> videos;

  std::size_t frame_count() const;
};

/// Loads every video under `root`, resized to (height, width). Targets come
/// from maps/ when present, otherwise from density_from_fixations with sigma
/// = width / 20 at the working resolution.
Dataset load_dataset(const std::filesystem::path& root, std::size_t height, std::size_t width);
VideoSample load_sample(const std::filesystem::path& video_dir, std::size_t height, std::size_t width);

}  // namespace tased
