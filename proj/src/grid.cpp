#include "haru/grid.hpp"

#include <algorithm>

namespace haru {

std::int32_t max_label(const InstanceMap& m) {
  std::int32_t best = 0;
  for (auto v : m.data) best = std::max(best, v);
  return best;
}

BinaryMap foreground(const InstanceMap& m) {
  BinaryMap out(m.height, m.width);
  for (std::size_t i = 0; i < m.size(); ++i) out.data[i] = m.data[i] > 0 ? 1 : 0;
  return out;
}

Tensor image_to_tensor(const Image& img) { return batch_images({&img}); }

Tensor batch_images(const std::vector<const Image*>& images) {
  if (images.empty()) throw UsageError("batch_images: empty batch");
  const std::size_t h = images[0]->height, w = images[0]->width, c = images[0]->channels;
  Tensor t({images.size(), c, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    if (img.height != h || img.width != w || img.channels != c) {
      throw DimensionError("batch_images: images in a batch must share H, W and channel count");
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t col = 0; col < w; ++col) t.at(n, ch, r, col) = img.at(r, col, ch);
      }
    }
  }
  return t;
}

Tensor batch_binary(const std::vector<const BinaryMap*>& maps) {
  if (maps.empty()) throw UsageError("batch_binary: empty batch");
  const std::size_t h = maps[0]->height, w = maps[0]->width;
  Tensor t({maps.size(), 1, h, w});
  for (std::size_t n = 0; n < maps.size(); ++n) {
    require_same_shape(*maps[0], *maps[n], "batch_binary");
    for (std::size_t i = 0; i < h * w; ++i) t.values()[n * h * w + i] = maps[n]->data[i];
  }
  return t;
}

ProbabilityMap tensor_plane(const Tensor& t, std::size_t n, std::size_t c) {
  if (t.rank() != 4) throw DimensionError("tensor_plane: expected a 4-D tensor, got " + shape_string(t.shape()));
  ProbabilityMap out(t.dim(2), t.dim(3));
  for (std::size_t r = 0; r < out.height; ++r) {
    for (std::size_t col = 0; col < out.width; ++col) out(r, col) = t.at(n, c, r, col);
  }
  return out;
}

}  // namespace haru
