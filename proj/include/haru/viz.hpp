#pragma once

#include <array>
#include <cstdint>

#include "haru/grid.hpp"

namespace haru {

using Rgb8 = std::array<std::uint8_t, 3>;

// Hue = frac(id · (√5 − 1)/2), fixed saturation and value; id 0 is black.
Rgb8 label_color(std::int32_t id);

// Colour-per-label rendering; `boundaries` paints instance contours white.
Image render_labels(const InstanceMap& labels, bool boundaries = false);

}  // namespace haru
