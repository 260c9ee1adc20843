#include "haru/postprocess.hpp"

#include <algorithm>
#include <deque>

namespace haru {

BinaryMap binarize(const ProbabilityMap& prob, double threshold) {
  BinaryMap out(prob.height, prob.width);
  for (std::size_t i = 0; i < prob.size(); ++i) out.data[i] = prob.data[i] >= threshold ? 1 : 0;
  return out;
}

Components connected_components(const BinaryMap& b) {
  Components out;
  out.labels = InstanceMap(b.height, b.width, 0);
  const long h = static_cast<long>(b.height), w = static_cast<long>(b.width);
  std::deque<std::pair<long, long>> queue;
  for (long r = 0; r < h; ++r) {
    for (long c = 0; c < w; ++c) {
      if (!b(r, c) || out.labels(r, c)) continue;
      const std::int32_t id = ++out.count;
      ComponentStats::Entry e;
      e.min_row = e.max_row = static_cast<std::size_t>(r);
      e.min_col = e.max_col = static_cast<std::size_t>(c);
      double sum_r = 0.0, sum_c = 0.0;
      out.labels(r, c) = id;
      queue.emplace_back(r, c);
      while (!queue.empty()) {
        auto [y, x] = queue.front();
        queue.pop_front();
        ++e.count;
        sum_r += static_cast<double>(y);
        sum_c += static_cast<double>(x);
        e.min_row = std::min(e.min_row, static_cast<std::size_t>(y));
        e.max_row = std::max(e.max_row, static_cast<std::size_t>(y));
        e.min_col = std::min(e.min_col, static_cast<std::size_t>(x));
        e.max_col = std::max(e.max_col, static_cast<std::size_t>(x));
        for (long dy = -1; dy <= 1; ++dy) {
          for (long dx = -1; dx <= 1; ++dx) {
            const long ny = y + dy, nx = x + dx;
            if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
            if (b(ny, nx) && !out.labels(ny, nx)) {
              out.labels(ny, nx) = id;
              queue.emplace_back(ny, nx);
            }
          }
        }
      }
      e.centroid_row = sum_r / static_cast<double>(e.count);
      e.centroid_col = sum_c / static_cast<double>(e.count);
      out.stats.components.push_back(e);
    }
  }
  return out;
}

BinaryMap erode(const BinaryMap& b, int iterations) {
  BinaryMap cur = b;
  const long h = static_cast<long>(b.height), w = static_cast<long>(b.width);
  for (int it = 0; it < iterations; ++it) {
    BinaryMap next(b.height, b.width, 0);
    for (long r = 0; r < h; ++r) {
      for (long c = 0; c < w; ++c) {
        if (!cur(r, c)) continue;
        bool keep = true;
        for (long dy = -1; dy <= 1 && keep; ++dy) {
          for (long dx = -1; dx <= 1 && keep; ++dx) {
            const long y = r + dy, x = c + dx;
            if (y >= 0 && x >= 0 && y < h && x < w && !cur(y, x)) keep = false;
          }
        }
        next(r, c) = keep ? 1 : 0;
      }
    }
    cur = std::move(next);
  }
  return cur;
}

bool is_mask_fully_covered(const InstanceMap& objects, const BinaryMap& mask) {
  require_same_shape(objects, mask, "is_mask_fully_covered");
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask.data[i] && objects.data[i] == 0) return false;
  }
  return true;
}

namespace {

struct Box {
  long r0, c0, r1, c1;  // inclusive
  void include(long r, long c) {
    r0 = std::min(r0, r);
    c0 = std::min(c0, c);
    r1 = std::max(r1, r);
    c1 = std::max(c1, c);
  }
};

Box box_of(const ComponentStats::Entry& e) {
  return Box{static_cast<long>(e.min_row), static_cast<long>(e.min_col), static_cast<long>(e.max_row),
             static_cast<long>(e.max_col)};
}

}  // namespace

InstanceMap instance_segment(const BinaryMap& mask, const BinaryMap& edge, int erosion_iters) {
  require_same_shape(mask, edge, "instance_segment");
  const long h = static_cast<long>(mask.height), w = static_cast<long>(mask.width);

  BinaryMap seeds(mask.height, mask.width, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) seeds.data[i] = (mask.data[i] && !edge.data[i]) ? 1 : 0;
  if (erosion_iters > 0) seeds = erode(seeds, erosion_iters);

  Components cc = connected_components(seeds);
  InstanceMap objects = std::move(cc.labels);
  std::vector<Box> boxes;
  for (const auto& e : cc.stats.components) boxes.push_back(box_of(e));

  std::vector<std::pair<long, long>> claims;
  while (!is_mask_fully_covered(objects, mask)) {
    std::size_t claimed = 0;
    for (std::size_t k = 0; k < boxes.size(); ++k) {
      const std::int32_t id = static_cast<std::int32_t>(k + 1);
      Box& box = boxes[k];
      claims.clear();
      // Dilation of the region as it stands before this id claims anything.
      for (long r = std::max(0L, box.r0 - 1); r <= std::min(h - 1, box.r1 + 1); ++r) {
        for (long c = std::max(0L, box.c0 - 1); c <= std::min(w - 1, box.c1 + 1); ++c) {
          if (objects(r, c) != 0 || !mask(r, c)) continue;
          bool touches = false;
          for (long dy = -1; dy <= 1 && !touches; ++dy) {
            for (long dx = -1; dx <= 1 && !touches; ++dx) {
              const long y = r + dy, x = c + dx;
              if (y >= 0 && x >= 0 && y < h && x < w && objects(y, x) == id) touches = true;
            }
          }
          if (touches) claims.emplace_back(r, c);
        }
      }
      for (auto [r, c] : claims) {
        objects(r, c) = id;
        box.include(r, c);
      }
      claimed += claims.size();
    }
    if (claimed > 0) continue;

    // Nothing can grow: the remaining pieces have no seed.
    BinaryMap leftover(mask.height, mask.width, 0);
    for (std::size_t i = 0; i < mask.size(); ++i) leftover.data[i] = (mask.data[i] && objects.data[i] == 0) ? 1 : 0;
    Components rest = connected_components(leftover);
    const auto base = static_cast<std::int32_t>(boxes.size());
    for (std::size_t i = 0; i < leftover.size(); ++i) {
      if (rest.labels.data[i]) objects.data[i] = base + rest.labels.data[i];
    }
    for (const auto& e : rest.stats.components) boxes.push_back(box_of(e));
  }
  return objects;
}

}  // namespace haru
