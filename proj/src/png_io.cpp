#include "haru/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <vector>

namespace haru {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

struct RawPng {
  std::size_t width = 0, height = 0, channels = 0, depth = 0;
  std::vector<std::vector<png_byte>> rows;

  unsigned sample(std::size_t r, std::size_t c, std::size_t ch) const {
    const std::size_t i = c * channels + ch;
    if (depth == 16) return (static_cast<unsigned>(rows[r][2 * i]) << 8) | rows[r][2 * i + 1];
    return rows[r][i];
  }
};

RawPng read_raw(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError(path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed");
  }
  RawPng raw;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed decoding " + path.string());
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);
  raw.width = png_get_image_width(png, info);
  raw.height = png_get_image_height(png, info);
  raw.channels = png_get_channels(png, info);
  raw.depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  raw.rows.assign(raw.height, std::vector<png_byte>(rowbytes));
  std::vector<png_bytep> ptrs(raw.height);
  for (std::size_t r = 0; r < raw.height; ++r) ptrs[r] = raw.rows[r].data();
  png_read_image(png, ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return raw;
}

void write_raw(const std::filesystem::path& path, std::size_t width, std::size_t height, int color, int depth,
               const std::vector<std::vector<png_byte>>& rows) {
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed encoding " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), depth, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (const auto& row : rows) png_write_row(png, const_cast<png_bytep>(row.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image read_png_rgb(const std::filesystem::path& path) {
  const RawPng raw = read_raw(path);
  const double maxv = raw.depth == 16 ? 65535.0 : 255.0;
  Image img(raw.height, raw.width, 3);
  const bool gray = raw.channels < 3;
  for (std::size_t r = 0; r < raw.height; ++r) {
    for (std::size_t c = 0; c < raw.width; ++c) {
      for (std::size_t ch = 0; ch < 3; ++ch) img.at(r, c, ch) = raw.sample(r, c, gray ? 0 : ch) / maxv;
    }
  }
  return img;
}

void write_png_rgb8(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 3) throw IoError("write_png_rgb8: image must have 3 channels");
  std::vector<std::vector<png_byte>> rows(img.height, std::vector<png_byte>(img.width * 3));
  for (std::size_t r = 0; r < img.height; ++r) {
    for (std::size_t i = 0; i < img.width * 3; ++i) {
      const double v = std::clamp(img.pixels[r * img.width * 3 + i], 0.0, 1.0);
      rows[r][i] = static_cast<png_byte>(std::lround(v * 255.0));
    }
  }
  write_raw(path, img.width, img.height, PNG_COLOR_TYPE_RGB, 8, rows);
}

Grid<std::uint16_t> read_png_gray(const std::filesystem::path& path) {
  const RawPng raw = read_raw(path);
  if (raw.channels != 1 && raw.channels != 2) {
    throw IoError(path.string() + ": expected a single-channel PNG, found " + std::to_string(raw.channels) + " channels");
  }
  Grid<std::uint16_t> g(raw.height, raw.width);
  for (std::size_t r = 0; r < raw.height; ++r) {
    for (std::size_t c = 0; c < raw.width; ++c) g(r, c) = static_cast<std::uint16_t>(raw.sample(r, c, 0));
  }
  return g;
}

void write_png_gray16(const std::filesystem::path& path, const Grid<std::uint16_t>& g) {
  std::vector<std::vector<png_byte>> rows(g.height, std::vector<png_byte>(g.width * 2));
  for (std::size_t r = 0; r < g.height; ++r) {
    for (std::size_t c = 0; c < g.width; ++c) {
      rows[r][2 * c] = static_cast<png_byte>(g(r, c) >> 8);
      rows[r][2 * c + 1] = static_cast<png_byte>(g(r, c) & 0xff);
    }
  }
  write_raw(path, g.width, g.height, PNG_COLOR_TYPE_GRAY, 16, rows);
}

InstanceMap read_label_png(const std::filesystem::path& path) {
  const auto g = read_png_gray(path);
  InstanceMap m(g.height, g.width);
  for (std::size_t i = 0; i < g.size(); ++i) m.data[i] = g.data[i];
  return m;
}

void write_label_png(const std::filesystem::path& path, const InstanceMap& labels) {
  Grid<std::uint16_t> g(labels.height, labels.width);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels.data[i] < 0 || labels.data[i] > 65535) {
      throw IoError("label " + std::to_string(labels.data[i]) + " does not fit a 16-bit PNG");
    }
    g.data[i] = static_cast<std::uint16_t>(labels.data[i]);
  }
  write_png_gray16(path, g);
}

ProbabilityMap read_probability_png(const std::filesystem::path& path) {
  const auto g = read_png_gray(path);
  ProbabilityMap p(g.height, g.width);
  for (std::size_t i = 0; i < g.size(); ++i) p.data[i] = g.data[i] / 65535.0;
  return p;
}

void write_probability_png(const std::filesystem::path& path, const ProbabilityMap& prob) {
  Grid<std::uint16_t> g(prob.height, prob.width);
  for (std::size_t i = 0; i < prob.size(); ++i) {
    g.data[i] = static_cast<std::uint16_t>(std::lround(std::clamp(prob.data[i], 0.0, 1.0) * 65535.0));
  }
  write_png_gray16(path, g);
}

}  // namespace haru
