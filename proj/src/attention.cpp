#include "haru/attention.hpp"

#include <algorithm>

namespace haru {

ChannelAttention::ChannelAttention(std::size_t channels, std::size_t reduction, Rng& rng)
    : channels_(channels), hidden_(std::max<std::size_t>(1, channels / std::max<std::size_t>(reduction, 1))) {
  fc1 = Linear(channels_, hidden_, rng);
  fc2 = Linear(hidden_, channels_, rng);
}

Tensor ChannelAttention::mlp(const Tensor& pooled) const {
  const std::size_t n = pooled.dim(0);
  Tensor flat = reshape(pooled, {n, channels_});
  return fc2.forward(relu(fc1.forward(flat)));
}

Tensor ChannelAttention::weights(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != channels_) {
    throw DimensionError("channel attention: expected " + std::to_string(channels_) + " channels, got " +
                         shape_string(x.shape()));
  }
  Tensor logits = add(mlp(global_pool(x, PoolMode::Avg)), mlp(global_pool(x, PoolMode::Max)));
  return reshape(sigmoid(logits), {x.dim(0), channels_, 1, 1});
}

void ChannelAttention::collect(StateLists& out, const std::string& prefix) const {
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

SpatialAttention::SpatialAttention(std::size_t kernel, Rng& rng) : conv(2, 1, kernel, kernel / 2, 1, true, rng) {
  if (kernel % 2 == 0) throw ConfigError("spatial attention: kernel size must be odd, got " + std::to_string(kernel));
}

Tensor SpatialAttention::weights(const Tensor& x) const {
  Tensor stacked = concat_channels({reduce_channels(x, PoolMode::Avg), reduce_channels(x, PoolMode::Max)});
  return sigmoid(conv.forward(stacked));
}

void SpatialAttention::collect(StateLists& out, const std::string& prefix) const { conv.collect(out, prefix + ".conv"); }

Cbam::Cbam(std::size_t channels, std::size_t reduction, std::size_t spatial_kernel, Rng& rng)
    : channel(channels, reduction, rng), spatial(spatial_kernel, rng) {}

Tensor Cbam::forward(const Tensor& x) const {
  Tensor fc = channel.forward(x);
  return spatial.forward(fc);
}

void Cbam::collect(StateLists& out, const std::string& prefix) const {
  channel.collect(out, prefix + ".channel");
  spatial.collect(out, prefix + ".spatial");
}

}  // namespace haru
