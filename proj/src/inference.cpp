#include "haru/inference.hpp"

#include <algorithm>

namespace haru {

std::size_t padded_extent(const NetworkConfig& config, std::size_t n) {
  const std::size_t m = Network::kInputMultiple;
  const std::size_t target = std::max(n, config.min_input_extent());
  return (target + m - 1) / m * m;
}

namespace {

ProbabilityMap crop_plane(const Tensor& t, std::size_t h, std::size_t w) {
  const ProbabilityMap full = tensor_plane(t);
  ProbabilityMap out(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) out(r, c) = full(r, c);
  }
  return out;
}

}  // namespace

Prediction predict_image(Network& net, const Image& image, bool with_sides) {
  NoGradGuard no_grad;
  const bool was_training = net.training();
  if (was_training) net.set_training(false);
  const std::size_t ph = padded_extent(net.config(), image.height);
  const std::size_t pw = padded_extent(net.config(), image.width);
  Image padded(ph, pw, image.channels);
  for (std::size_t r = 0; r < ph; ++r) {
    for (std::size_t c = 0; c < pw; ++c) {
      const std::size_t sr = std::min(r, image.height - 1), sc = std::min(c, image.width - 1);
      for (std::size_t ch = 0; ch < image.channels; ++ch) padded.at(r, c, ch) = image.at(sr, sc, ch);
    }
  }
  const NetworkOutput out = net.forward(image_to_tensor(padded));
  if (was_training) net.set_training(true);

  Prediction p;
  p.mask = crop_plane(out.s_mask, image.height, image.width);
  p.edge = crop_plane(out.s_edge, image.height, image.width);
  if (with_sides) {
    for (const auto& t : out.mask_sides) p.mask_sides.push_back(crop_plane(t, image.height, image.width));
    for (const auto& t : out.edge_sides) p.edge_sides.push_back(crop_plane(t, image.height, image.width));
  }
  return p;
}

}  // namespace haru
