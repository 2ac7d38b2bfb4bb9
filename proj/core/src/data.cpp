#include "tased/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

#include "tased/error.hpp"
#include "tased/rng.hpp"

namespace fs = std::filesystem;

namespace tased {

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out << text;
  if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

// Frame numbers of the "%05d.png" files in a directory, sorted.
std::vector<std::size_t> numbered_pngs(const fs::path& dir) {
  std::vector<std::size_t> numbers;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path& p = entry.path();
    if (p.extension() != ".png") continue;
    const std::string stem = p.stem().string();
    if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw IoError(fmt::format("unexpected file '{}' (frames must be named %05d.png)", p.string()));
    }
    numbers.push_back(std::stoul(stem));
  }
  std::sort(numbers.begin(), numbers.end());
  return numbers;
}

void require_contiguous(const std::vector<std::size_t>& numbers, const fs::path& dir) {
  for (std::size_t i = 0; i < numbers.size(); ++i) {
    if (numbers[i] != i + 1) {
      throw IoError(fmt::format("non-contiguous frame numbering in '{}': expected {}, found {}", dir.string(),
                                frame_path(dir.parent_path(), i + 1).filename().string(),
                                frame_path(dir.parent_path(), numbers[i]).filename().string()));
    }
  }
}

}  // namespace

void FixationRecord::validate() const {
  for (const Fixation& f : points) {
    if (f.row >= height || f.col >= width) {
      throw IoError(fmt::format("fixation ({}, {}) outside a {}x{} frame", f.row, f.col, height, width));
    }
  }
  if (density) {
    if (density->shape() != Shape{height, width}) {
      throw IoError(fmt::format("density map shape {} does not match frame {}x{}", shape_str(density->shape()),
                                height, width));
    }
    if (!(sum(*density) > 0.0)) throw IoError("density map must have a positive sum");
  }
}

std::size_t Dataset::frame_count() const {
  std::size_t n = 0;
  for (const VideoSample& v : videos) n += v.size();
  return n;
}

fs::path frame_path(const fs::path& video_dir, std::size_t frame_number) {
  return video_dir / "frames" / fmt::format("{:05d}.png", frame_number);
}

fs::path map_path(const fs::path& video_dir, std::size_t frame_number) {
  return video_dir / "maps" / fmt::format("{:05d}.png", frame_number);
}

std::vector<std::string> list_videos(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError(fmt::format("dataset root '{}' is not a directory", root.string()));
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::is_directory(entry.path() / "frames")) {
      ids.push_back(entry.path().filename().string());
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

VideoInfo probe_video(const fs::path& video_dir) {
  const fs::path dir = video_dir / "frames";
  if (!fs::is_directory(dir)) throw IoError(fmt::format("missing frames directory '{}'", dir.string()));
  const std::vector<std::size_t> numbers = numbered_pngs(dir);
  if (numbers.empty()) throw IoError(fmt::format("no frames in '{}'", dir.string()));
  require_contiguous(numbers, dir);
  const Image first = read_png(frame_path(video_dir, 1), 3);
  return {video_dir.filename().string(), numbers.size(), first.height, first.width};
}

VideoSequence load_video(const fs::path& video_dir) {
  const fs::path dir = video_dir / "frames";
  if (!fs::is_directory(dir)) throw IoError(fmt::format("missing frames directory '{}'", dir.string()));
  const std::vector<std::size_t> numbers = numbered_pngs(dir);
  if (numbers.empty()) throw IoError(fmt::format("no frames in '{}'", dir.string()));
  require_contiguous(numbers, dir);
  VideoSequence video;
  video.id = video_dir.filename().string();
  for (std::size_t n = 1; n <= numbers.size(); ++n) {
    const fs::path path = frame_path(video_dir, n);
    Image frame = read_png(path, 3);
    if (n == 1) {
      video.height = frame.height;
      video.width = frame.width;
    } else if (frame.height != video.height || frame.width != video.width) {
      throw IoError(fmt::format("'{}' is {}x{}, expected {}x{} like the first frame", path.string(), frame.height,
                                frame.width, video.height, video.width));
    }
    video.frames.push_back(std::move(frame));
  }
  return video;
}

std::vector<std::vector<Fixation>> parse_fixations_csv(const std::string& text, std::size_t frame_count,
                                                       std::size_t height, std::size_t width,
                                                       const std::string& source) {
  std::vector<std::vector<Fixation>> per_frame(frame_count);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line == "frame,row,col") continue;
    long long values[3];
    std::size_t start = 0;
    for (int k = 0; k < 3; ++k) {
      const std::size_t comma = k < 2 ? line.find(',', start) : line.size();
      if (comma == std::string::npos) {
        throw IoError(fmt::format("{}:{}: expected 'frame,row,col', got '{}'", source, line_no, line));
      }
      const std::string field = line.substr(start, comma - start);
      std::size_t pos = 0;
      try {
        values[k] = std::stoll(field, &pos);
      } catch (const std::exception&) {
        pos = std::string::npos;
      }
      if (pos != field.size() || field.empty()) {
        throw IoError(fmt::format("{}:{}: '{}' is not an integer", source, line_no, field));
      }
      start = comma + 1;
    }
    const auto [frame, row, col] = std::tuple(values[0], values[1], values[2]);
    if (frame < 1 || static_cast<std::size_t>(frame) > frame_count) {
      throw IoError(fmt::format("{}:{}: frame {} outside 1..{}", source, line_no, frame, frame_count));
    }
    if (row < 0 || col < 0 || static_cast<std::size_t>(row) >= height || static_cast<std::size_t>(col) >= width) {
      throw IoError(fmt::format("{}:{}: fixation ({}, {}) outside a {}x{} frame", source, line_no, row, col, height,
                                width));
    }
    per_frame[static_cast<std::size_t>(frame - 1)].push_back(
        {static_cast<std::size_t>(row), static_cast<std::size_t>(col)});
  }
  return per_frame;
}

std::string format_fixations_csv(const std::vector<std::vector<Fixation>>& per_frame) {
  std::string out = "frame,row,col\n";
  for (std::size_t t = 0; t < per_frame.size(); ++t) {
    for (const Fixation& f : per_frame[t]) out += fmt::format("{},{},{}\n", t + 1, f.row, f.col);
  }
  return out;
}

Tensor load_map(const fs::path& path) {
  const Image image = read_png(path, 1);
  Tensor map({image.height, image.width});
  for (std::size_t i = 0; i < map.numel(); ++i) map[i] = static_cast<double>(image.pixels[i]) / 255.0;
  return map;
}

std::vector<FixationRecord> load_annotations(const fs::path& video_dir, std::size_t frame_count,
                                             std::size_t height, std::size_t width) {
  const fs::path csv = video_dir / "fixations.csv";
  std::vector<std::vector<Fixation>> points(frame_count);
  if (fs::exists(csv)) points = parse_fixations_csv(read_text(csv), frame_count, height, width, csv.string());
  const bool has_maps = fs::is_directory(video_dir / "maps");
  if (!fs::exists(csv) && !has_maps) {
    throw IoError(fmt::format("'{}' has neither fixations.csv nor maps/", video_dir.string()));
  }
  if (has_maps) {
    const std::vector<std::size_t> numbers = numbered_pngs(video_dir / "maps");
    require_contiguous(numbers, video_dir / "maps");
    if (numbers.size() != frame_count) {
      throw IoError(fmt::format("'{}' has {} maps for {} frames", (video_dir / "maps").string(), numbers.size(),
                                frame_count));
    }
  }
  std::vector<FixationRecord> records(frame_count);
  for (std::size_t t = 0; t < frame_count; ++t) {
    FixationRecord& r = records[t];
    r.height = height;
    r.width = width;
    r.points = std::move(points[t]);
    if (has_maps) {
      const fs::path path = map_path(video_dir, t + 1);
      Tensor map = load_map(path);
      if (map.shape() != Shape{height, width}) {
        throw IoError(fmt::format("'{}' is {}x{}, expected {}x{}", path.string(), map.dim(0), map.dim(1), height,
                                  width));
      }
      if (!(sum(map) > 0.0)) throw IoError(fmt::format("'{}' is an all-zero density map", path.string()));
      r.density = std::move(map);
    }
  }
  return records;
}

Tensor preprocess(const Image& frame, std::size_t height, std::size_t width) {
  if (frame.channels != 3) throw ShapeError("preprocess expects an RGB frame");
  Tensor x = resize_bilinear(image_to_tensor(frame), height, width);
  for (double& v : x.data()) v = v / 127.5 - 1.0;
  return x;
}

Tensor density_from_fixations(const std::vector<Fixation>& points, std::size_t height, std::size_t width,
                              double sigma) {
  if (points.empty()) throw std::invalid_argument("density_from_fixations: no fixations");
  if (!(sigma > 0.0)) throw std::invalid_argument("density_from_fixations: sigma must be positive");
  Tensor d({height, width});
  const double radius = 4.0 * sigma;
  const auto reach = static_cast<long long>(std::floor(radius));
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (const Fixation& f : points) {
    if (f.row >= height || f.col >= width) {
      throw std::invalid_argument(
          fmt::format("fixation ({}, {}) outside a {}x{} frame", f.row, f.col, height, width));
    }
    const auto r0 = static_cast<long long>(f.row);
    const auto c0 = static_cast<long long>(f.col);
    for (long long r = std::max(0LL, r0 - reach); r <= std::min<long long>(height - 1, r0 + reach); ++r) {
      for (long long c = std::max(0LL, c0 - reach); c <= std::min<long long>(width - 1, c0 + reach); ++c) {
        const double dist2 = static_cast<double>((r - r0) * (r - r0) + (c - c0) * (c - c0));
        if (dist2 > radius * radius) continue;
        d[static_cast<std::size_t>(r) * width + static_cast<std::size_t>(c)] += std::exp(-dist2 * inv);
      }
    }
  }
  const double total = sum(d);
  for (double& v : d.data()) v /= total;
  return d;
}

Fixation rescale_fixation(const Fixation& f, std::size_t from_h, std::size_t from_w, std::size_t to_h,
                          std::size_t to_w) {
  auto axis = [](std::size_t v, std::size_t from, std::size_t to) {
    const double scaled = (static_cast<double>(v) + 0.5) * static_cast<double>(to) / static_cast<double>(from);
    return std::min(static_cast<std::size_t>(std::floor(scaled)), to - 1);
  };
  return {axis(f.row, from_h, to_h), axis(f.col, from_w, to_w)};
}

Image quantize_map(const Tensor& map, std::size_t height, std::size_t width) {
  if (map.rank() != 2) throw ShapeError(fmt::format("expected an (H, W) map, got {}", shape_str(map.shape())));
  const Tensor resized = resize_bilinear(map, height, width);
  const double hi = max_value(resized);
  const double lo = min_value(resized);
  Image image(height, width, 1, 255);
  if (hi > lo && hi > 0.0) {
    for (std::size_t i = 0; i < resized.numel(); ++i) {
      const double v = std::clamp(resized[i] / hi, 0.0, 1.0);
      image.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
  }
  return image;
}

void export_saliency(const Tensor& map, const fs::path& path, std::size_t height, std::size_t width) {
  write_png(path, quantize_map(map, height, width));
}

std::vector<SynthVideo> synth_dataset(const fs::path& root, const SynthParams& params) {
  if (params.videos == 0 || params.frames == 0 || params.height < 8 || params.width < 8 || params.blobs == 0 ||
      params.waypoints < 2) {
    throw ConfigError("synth: need videos, frames, blobs >= 1, waypoints >= 2 and a frame of at least 8x8");
  }
  const std::size_t H = params.height;
  const std::size_t W = params.width;
  const double blob_sigma = params.blob_scale * static_cast<double>(std::min(H, W));
  const double margin = std::min(2.0 * blob_sigma, 0.25 * static_cast<double>(std::min(H, W)));
  const double density_sigma = default_sigma(W);
  const double fixation_sd = static_cast<double>(W) / 40.0;

  std::vector<SynthVideo> result;
  for (std::size_t v = 0; v < params.videos; ++v) {
    Rng rng(derive_seed(params.seed, v));
    SynthVideo video;
    video.id = fmt::format("video{:03d}", v + 1);
    const fs::path dir = root / video.id;
    fs::create_directories(dir / "frames");
    if (params.write_maps) fs::create_directories(dir / "maps");

    // Static textured background: two oriented gratings plus pixel noise.
    std::vector<double> background(H * W * 3);
    const double fx = rng.uniform(0.05, 0.25);
    const double fy = rng.uniform(0.05, 0.25);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double tint[3] = {rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2)};
    for (std::size_t r = 0; r < H; ++r) {
      for (std::size_t c = 0; c < W; ++c) {
        const double pattern = 0.08 * std::sin(fx * static_cast<double>(c) + phase) +
                               0.06 * std::sin(fy * static_cast<double>(r) - 0.5 * phase);
        for (std::size_t ch = 0; ch < 3; ++ch) {
          background[(r * W + c) * 3 + ch] = tint[ch] * (0.3 + pattern) + rng.normal(0.0, 0.03);
        }
      }
    }

    // Piecewise-linear trajectories, one per blob; blob 0 is the salient one.
    std::vector<std::vector<std::pair<double, double>>> paths(params.blobs);
    for (auto& path : paths) {
      for (std::size_t k = 0; k < params.waypoints; ++k) {
        path.emplace_back(rng.uniform(margin, static_cast<double>(H - 1) - margin),
                          rng.uniform(margin, static_cast<double>(W - 1) - margin));
      }
    }
    auto position = [&](std::size_t b, std::size_t t) {
      const auto& path = paths[b];
      if (params.frames == 1) return path.front();
      const double u = static_cast<double>(t) * static_cast<double>(params.waypoints - 1) /
                       static_cast<double>(params.frames - 1);
      const std::size_t seg = std::min(static_cast<std::size_t>(u), params.waypoints - 2);
      const double a = u - static_cast<double>(seg);
      return std::pair{path[seg].first + a * (path[seg + 1].first - path[seg].first),
                       path[seg].second + a * (path[seg + 1].second - path[seg].second)};
    };

    std::vector<std::vector<Fixation>> fixations(params.frames);
    for (std::size_t t = 0; t < params.frames; ++t) {
      Image frame(H, W, 3);
      std::vector<Fixation> centers;
      for (std::size_t b = 0; b < params.blobs; ++b) {
        const auto [cy, cx] = position(b, t);
        centers.push_back({static_cast<std::size_t>(std::lround(cy)), static_cast<std::size_t>(std::lround(cx))});
      }
      const double inv = 1.0 / (2.0 * blob_sigma * blob_sigma);
      for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t c = 0; c < W; ++c) {
          double blob = 0.0;
          for (std::size_t b = 0; b < params.blobs; ++b) {
            const double dy = static_cast<double>(r) - static_cast<double>(centers[b].row);
            const double dx = static_cast<double>(c) - static_cast<double>(centers[b].col);
            blob += (b == 0 ? 0.65 : 0.2) * std::exp(-(dy * dy + dx * dx) * inv);
          }
          for (std::size_t ch = 0; ch < 3; ++ch) {
            const double value = background[(r * W + c) * 3 + ch] + blob + rng.normal(0.0, 0.01);
            frame.at(r, c, ch) = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(value, 0.0, 1.0)));
          }
        }
      }
      write_png(frame_path(dir, t + 1), frame);

      const Fixation center = centers.front();
      for (std::size_t k = 0; k < params.fixations_per_frame; ++k) {
        const double r = std::clamp(std::round(static_cast<double>(center.row) + rng.normal(0.0, fixation_sd)), 0.0,
                                    static_cast<double>(H - 1));
        const double c = std::clamp(std::round(static_cast<double>(center.col) + rng.normal(0.0, fixation_sd)), 0.0,
                                    static_cast<double>(W - 1));
        fixations[t].push_back({static_cast<std::size_t>(r), static_cast<std::size_t>(c)});
      }
      if (params.write_maps) {
        write_png(map_path(dir, t + 1), quantize_map(density_from_fixations({center}, H, W, density_sigma), H, W));
      }
      video.centers.push_back(center);
    }
    write_text(dir / "fixations.csv", format_fixations_csv(fixations));
    result.push_back(std::move(video));
  }
  return result;
}

VideoSample load_sample(const fs::path& video_dir, std::size_t height, std::size_t width) {
  const VideoSequence video = load_video(video_dir);
  const std::vector<FixationRecord> records = load_annotations(video_dir, video.size(), video.height, video.width);
  VideoSample sample;
  sample.id = video.id;
  sample.native_height = video.height;
  sample.native_width = video.width;
  for (std::size_t t = 0; t < video.size(); ++t) {
    sample.frames.push_back(preprocess(video.frames[t], height, width));
    const FixationRecord& native = records[t];
    FixationRecord working;
    working.height = height;
    working.width = width;
    for (const Fixation& f : native.points) {
      working.points.push_back(rescale_fixation(f, video.height, video.width, height, width));
    }
    if (native.density) {
      working.density = resize_bilinear(*native.density, height, width);
      sample.targets.push_back(*working.density);
    } else {
      if (working.points.empty()) {
        throw IoError(fmt::format("'{}' frame {} has neither fixations nor a density map", video_dir.string(), t + 1));
      }
      sample.targets.push_back(density_from_fixations(working.points, height, width, default_sigma(width)));
    }
    sample.fixations.push_back(std::move(working));
  }
  return sample;
}

Dataset load_dataset(const fs::path& root, std::size_t height, std::size_t width) {
  Dataset ds;
  for (const std::string& id : list_videos(root)) ds.videos.push_back(load_sample(root / id, height, width));
  if (ds.videos.empty()) throw IoError(fmt::format("no videos found under '{}'", root.string()));
  return ds;
}

}  // namespace tased
