#pragma once

#include "haru/layers.hpp"

namespace haru {

/// Channel gate: sigmoid(MLP(avgpool(F)) + MLP(maxpool(F))) with one MLP shared by both pooled paths.
/// Hidden width is max(1, C / reduction).
class ChannelAttention {
 public:
  ChannelAttention() = default;
  ChannelAttention(std::size_t channels, std::size_t reduction, Rng& rng);

  /// Returns the [N,C,1,1] weight map.
  Tensor weights(const Tensor& x) const;
  /// x ⊗ weights(x)
  Tensor forward(const Tensor& x) const { return mul_broadcast(x, weights(x)); }
  void collect(StateLists& out, const std::string& prefix) const;

  std::size_t channels() const { return channels_; }
  std::size_t hidden() const { return hidden_; }

  Linear fc1;
  Linear fc2;

 private:
  Tensor mlp(const Tensor& pooled) const;
  std::size_t channels_ = 0;
  std::size_t hidden_ = 0;
};

/// Spatial gate: sigmoid(conv_k([mean_c(F); max_c(F)])), zero-padded so H×W is preserved.
class SpatialAttention {
 public:
  SpatialAttention() = default;
  SpatialAttention(std::size_t kernel, Rng& rng);

  /// Returns the [N,1,H,W] weight map.
  Tensor weights(const Tensor& x) const;
  Tensor forward(const Tensor& x) const { return mul_broadcast(x, weights(x)); }
  void collect(StateLists& out, const std::string& prefix) const;

  Conv2d conv;
};

/// Channel gate followed by spatial gate: Fc = Mc(F) ⊗ F, Fout = Ms(Fc) ⊗ Fc.
class Cbam {
 public:
  Cbam() = default;
  Cbam(std::size_t channels, std::size_t reduction, std::size_t spatial_kernel, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(StateLists& out, const std::string& prefix) const;

  ChannelAttention channel;
  SpatialAttention spatial;
};

}  // namespace haru
