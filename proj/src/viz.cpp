#include "haru/viz.hpp"

#include <cmath>

#include "haru/data.hpp"

namespace haru {

namespace {

constexpr double kGoldenFraction = 0.61803398874989484820;
constexpr double kSaturation = 0.75;
constexpr double kValue = 0.95;

Rgb8 hsv_to_rgb8(double h, double s, double v) {
  const double hh = h * 6.0;
  const int sector = static_cast<int>(std::floor(hh)) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = 0, g = 0, b = 0;
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
  auto q8 = [](double x) { return static_cast<std::uint8_t>(std::lround(x * 255.0)); };
  return {q8(r), q8(g), q8(b)};
}

}  // namespace

Rgb8 label_color(std::int32_t id) {
  if (id <= 0) return {0, 0, 0};
  const double x = static_cast<double>(id) * kGoldenFraction;
  return hsv_to_rgb8(x - std::floor(x), kSaturation, kValue);
}

Image render_labels(const InstanceMap& labels, bool boundaries) {
  Image img(labels.height, labels.width, 3);
  const BinaryMap edge = boundaries ? boundary_pixels(labels) : BinaryMap(labels.height, labels.width, 0);
  for (std::size_t r = 0; r < labels.height; ++r) {
    for (std::size_t c = 0; c < labels.width; ++c) {
      const Rgb8 rgb = edge(r, c) ? Rgb8{255, 255, 255} : label_color(labels(r, c));
      for (std::size_t ch = 0; ch < 3; ++ch) img.at(r, c, ch) = rgb[ch] / 255.0;
    }
  }
  return img;
}

}  // namespace haru
