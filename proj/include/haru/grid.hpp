#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "haru/tensor.hpp"

namespace haru {

// Row-major H×W raster.
template <typename T>
struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(std::size_t h, std::size_t w, T fill = T{}) : height(h), width(w), data(h * w, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * width + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * width + c]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Grid& other) const { return height == other.height && width == other.width; }
  bool operator==(const Grid& other) const = default;
};

using BinaryMap = Grid<std::uint8_t>;
using InstanceMap = Grid<std::int32_t>;
using ProbabilityMap = Grid<double>;

// Interleaved H×W×C image with values in [0,1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c = 3, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  double& at(std::size_t r, std::size_t c, std::size_t ch) { return pixels[(r * width + c) * channels + ch]; }
  double at(std::size_t r, std::size_t c, std::size_t ch) const { return pixels[(r * width + c) * channels + ch]; }
  bool operator==(const Image& other) const = default;
};

template <typename A, typename B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw DimensionError(std::string(what) + ": shape mismatch " + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

// Number of instances, i.e. the largest label.
std::int32_t max_label(const InstanceMap& m);
BinaryMap foreground(const InstanceMap& m);

// Conversions between rasters and [1,C,H,W] tensors.
Tensor image_to_tensor(const Image& img);
Tensor batch_images(const std::vector<const Image*>& images);
Tensor batch_binary(const std::vector<const BinaryMap*>& maps);
ProbabilityMap tensor_plane(const Tensor& t, std::size_t n = 0, std::size_t c = 0);

}  // namespace haru
