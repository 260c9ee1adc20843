#pragma once

#include <vector>

#include "haru/attention.hpp"
#include "haru/layers.hpp"

namespace haru {

struct RsuSpec {
  int height = 7;
  std::size_t in_ch = 3;
  std::size_t mid_ch = 8;
  std::size_t out_ch = 16;
  bool dilated = false;  // full resolution at every level, dilation doubling per level
};

// Residual U-block: out = F(x) + U(F(x)), where F is the input conv to out_ch and
// U is a U-net of the given height running at mid_ch.
//
// Pooled variant (height n): n-1 encoder convs separated by n-2 ceil-mode 2x2 max pools,
// a dilation-2 bottom conv, then n-1 decoder convs with bilinear upsampling and skip concat.
// Dilated variant: same topology with dilation 1,2,4,... and no resampling.
class RsuBlock {
 public:
  RsuBlock() = default;
  RsuBlock(const RsuSpec& spec, Rng& rng);

  Tensor forward(const Tensor& x, bool training);
  void collect(StateLists& out, const std::string& prefix) const;
  // Everything except the input conv, i.e. the parameters of U.
  StateLists internal_state() const;

  const RsuSpec& spec() const { return spec_; }
  // Smallest H or W the pooled variant accepts.
  std::size_t min_extent() const;

  ConvBnRelu input;
  std::vector<ConvBnRelu> encoders;
  ConvBnRelu bottom;
  std::vector<ConvBnRelu> decoders;

 private:
  RsuSpec spec_;
};

// Context fusion over the six side maps: resize to the output size, concatenate,
// reweight channels with an SE-style gate built from global avg and max pooling,
// then a 3x3 conv down to one channel. Returns pre-sigmoid logits.
class CfBlock {
 public:
  static constexpr std::size_t kInputs = 6;

  CfBlock() = default;
  explicit CfBlock(Rng& rng);

  Tensor forward(const std::vector<Tensor>& sides, std::size_t out_h, std::size_t out_w) const;
  void collect(StateLists& out, const std::string& prefix) const;

  ChannelAttention squeeze;
  Conv2d out_conv;
};

// Ablation baseline: plain concatenation followed by a 1x1 conv.
class ConcatFusion {
 public:
  ConcatFusion() = default;
  explicit ConcatFusion(Rng& rng);

  Tensor forward(const std::vector<Tensor>& sides, std::size_t out_h, std::size_t out_w) const;
  void collect(StateLists& out, const std::string& prefix) const;

  Conv2d out_conv;
};

// Resizes every side map to out_h × out_w and stacks them along channels.
Tensor stack_sides(const std::vector<Tensor>& sides, std::size_t out_h, std::size_t out_w);

}  // namespace haru
