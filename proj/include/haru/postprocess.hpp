#pragma once

#include <vector>

#include "haru/grid.hpp"

namespace haru {

// 1 where prob >= threshold.
BinaryMap binarize(const ProbabilityMap& prob, double threshold = 0.5);

struct ComponentStats {
  struct Entry {
    std::size_t count = 0;
    std::size_t min_row = 0, min_col = 0, max_row = 0, max_col = 0;  // inclusive bounding box
    double centroid_row = 0.0, centroid_col = 0.0;
  };
  std::vector<Entry> components;  // entry k-1 describes label k
};

struct Components {
  InstanceMap labels;
  ComponentStats stats;
  std::int32_t count = 0;
};

// 8-connected labelling of nonzero pixels; labels follow first encounter in a row-major scan.
Components connected_components(const BinaryMap& b);

// `iterations` rounds of 3x3 erosion; pixels outside the image count as foreground.
BinaryMap erode(const BinaryMap& b, int iterations);

// Seeds are the components of mask ⊙ (1 - edge) (optionally eroded); each round, for every id in
// ascending order, the id's current region is dilated by the 3x3 all-ones kernel and claims the
// unlabelled mask pixels it reaches. Rounds repeat until the mask is covered. If a round claims
// nothing while mask pixels remain, each remaining 8-connected piece becomes a new instance.
InstanceMap instance_segment(const BinaryMap& mask, const BinaryMap& edge, int erosion_iters = 0);

bool is_mask_fully_covered(const InstanceMap& objects, const BinaryMap& mask);

}  // namespace haru
