#pragma once

#include <vector>

#include "haru/grid.hpp"
#include "haru/network.hpp"

namespace haru {

struct Prediction {
  ProbabilityMap mask;
  ProbabilityMap edge;
  std::vector<ProbabilityMap> mask_sides;
  std::vector<ProbabilityMap> edge_sides;
};

// Eval-mode forward pass without graph recording. Images whose sides are not a valid network
// extent are padded by edge replication at the bottom/right and the maps cropped back.
// Concurrent calls are safe once the net is already in eval mode.
Prediction predict_image(Network& net, const Image& image, bool with_sides = false);

// Smallest valid network extent that is >= n.
std::size_t padded_extent(const NetworkConfig& config, std::size_t n);

}  // namespace haru
