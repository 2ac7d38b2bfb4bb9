#include "tased/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include <fmt/format.h>

#include "tased/error.hpp"

namespace tased {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp png, png_const_charp message) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text != nullptr) *text = message;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

}  // namespace

Image read_png(const std::filesystem::path& path, std::size_t channels) {
  if (channels != 1 && channels != 3) throw std::invalid_argument("read_png: channels must be 1 or 3");
  File file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError(fmt::format("cannot open image '{}'", path.string()));
  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw IoError(fmt::format("'{}' is not a PNG file", path.string()));
  }
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  Image image;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(fmt::format("cannot decode '{}': {}", path.string(), message));
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  const bool gray_source = (color & PNG_COLOR_MASK_COLOR) == 0;
  if (channels == 3 && gray_source) png_set_gray_to_rgb(png);
  // Luma weights; an RGB pixel with r == g == b keeps its value.
  if (channels == 1 && !gray_source) png_set_rgb_to_gray_fixed(png, 1, 21268, 71514);
  png_read_update_info(png, info);

  image.height = png_get_image_height(png, info);
  image.width = png_get_image_width(png, info);
  image.channels = channels;
  if (png_get_rowbytes(png, info) != image.width * channels) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(fmt::format("'{}': unexpected PNG row layout", path.string()));
  }
  image.pixels.resize(image.height * image.width * channels);
  rows.resize(image.height);
  for (std::size_t r = 0; r < image.height; ++r) rows[r] = image.pixels.data() + r * image.width * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw std::invalid_argument("write_png: channels must be 1 or 3");
  if (image.pixels.size() != image.height * image.width * image.channels) {
    throw std::invalid_argument("write_png: pixel buffer does not match dimensions");
  }
  File file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  std::vector<png_bytep> rows(image.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(fmt::format("cannot encode '{}': {}", path.string(), message));
  }
  png_init_io(png, file.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < image.height; ++r) {
    rows[r] = const_cast<png_bytep>(image.pixels.data() + r * image.width * image.channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

namespace {

struct Taps {
  std::vector<std::size_t> lo;
  std::vector<std::size_t> hi;
  std::vector<double> frac;
};

Taps bilinear_taps(std::size_t in, std::size_t out) {
  Taps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, std::size_t height, std::size_t width) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw ShapeError(fmt::format("resize_bilinear expects (H, W) or (C, H, W), got {}", shape_str(x.shape())));
  }
  if (height == 0 || width == 0) throw ShapeError("resize_bilinear: target size must be positive");
  const std::size_t channels = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t h0 = x.dim(x.rank() - 2);
  const std::size_t w0 = x.dim(x.rank() - 1);
  if (h0 == height && w0 == width) return x;
  const Taps th = bilinear_taps(h0, height);
  const Taps tw = bilinear_taps(w0, width);
  Shape shape = x.rank() == 3 ? Shape{channels, height, width} : Shape{height, width};
  Tensor y(shape);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* src = x.raw() + c * h0 * w0;
    double* dst = y.raw() + c * height * width;
    for (std::size_t i = 0; i < height; ++i) {
      const double* r0 = src + th.lo[i] * w0;
      const double* r1 = src + th.hi[i] * w0;
      const double fy = th.frac[i];
      for (std::size_t j = 0; j < width; ++j) {
        const double fx = tw.frac[j];
        const double top = r0[tw.lo[j]] + fx * (r0[tw.hi[j]] - r0[tw.lo[j]]);
        const double bottom = r1[tw.lo[j]] + fx * (r1[tw.hi[j]] - r1[tw.lo[j]]);
        dst[i * width + j] = top + fy * (bottom - top);
      }
    }
  }
  return y;
}

Tensor image_to_tensor(const Image& image) {
  Tensor t({image.channels, image.height, image.width});
  const std::size_t plane = image.height * image.width;
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < image.channels; ++c) {
      t[c * plane + p] = static_cast<double>(image.pixels[p * image.channels + c]);
    }
  }
  return t;
}

}  // namespace tased
