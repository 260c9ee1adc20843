#include "haru/blocks.hpp"

namespace haru {

RsuBlock::RsuBlock(const RsuSpec& spec, Rng& rng) : spec_(spec) {
  if (spec.height < 2) throw ConfigError("RSU height must be >= 2, got " + std::to_string(spec.height));
  if (spec.in_ch == 0 || spec.mid_ch == 0 || spec.out_ch == 0) throw ConfigError("RSU channel counts must be >= 1");
  const std::size_t levels = static_cast<std::size_t>(spec.height - 1);
  input = ConvBnRelu(spec.in_ch, spec.out_ch, 1, rng);
  for (std::size_t i = 0; i < levels; ++i) {
    const std::size_t dilation = spec.dilated ? (std::size_t{1} << i) : 1;
    encoders.emplace_back(i == 0 ? spec.out_ch : spec.mid_ch, spec.mid_ch, dilation, rng);
  }
  bottom = ConvBnRelu(spec.mid_ch, spec.mid_ch, spec.dilated ? (std::size_t{1} << levels) : 2, rng);
  for (std::size_t i = 0; i < levels; ++i) {
    const std::size_t dilation = spec.dilated ? (std::size_t{1} << i) : 1;
    decoders.emplace_back(2 * spec.mid_ch, i == 0 ? spec.out_ch : spec.mid_ch, dilation, rng);
  }
}

std::size_t RsuBlock::min_extent() const {
  return spec_.dilated ? 1 : (std::size_t{1} << (spec_.height - 2));
}

Tensor RsuBlock::forward(const Tensor& x, bool training) {
  if (x.rank() != 4 || x.dim(1) != spec_.in_ch) {
    throw DimensionError("RSU: expected " + std::to_string(spec_.in_ch) + " input channels, got " +
                         shape_string(x.shape()));
  }
  const std::size_t h = x.dim(2), w = x.dim(3);
  if (h < min_extent() || w < min_extent()) {
    throw ConfigError("RSU of height n=" + std::to_string(spec_.height) + " needs H, W >= " +
                      std::to_string(min_extent()) + ", got " + std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t levels = encoders.size();
  Tensor hxin = input.forward(x, training);

  std::vector<Tensor> enc(levels);
  enc[0] = encoders[0].forward(hxin, training);
  for (std::size_t i = 1; i < levels; ++i) {
    Tensor in = spec_.dilated ? enc[i - 1] : max_pool2d(enc[i - 1], 2, 2);
    enc[i] = encoders[i].forward(in, training);
  }
  Tensor d = bottom.forward(enc[levels - 1], training);
  for (std::size_t i = levels; i-- > 0;) {
    if (d.dim(2) != enc[i].dim(2) || d.dim(3) != enc[i].dim(3)) d = upsample_bilinear(d, enc[i].dim(2), enc[i].dim(3));
    d = decoders[i].forward(concat_channels({d, enc[i]}), training);
  }
  return add(d, hxin);
}

void RsuBlock::collect(StateLists& out, const std::string& prefix) const {
  input.collect(out, prefix + ".in");
  StateLists rest = internal_state();
  for (auto& [name, t] : rest.parameters) out.parameters.push_back({prefix + name, t});
  for (auto& [name, t] : rest.buffers) out.buffers.push_back({prefix + name, t});
}

StateLists RsuBlock::internal_state() const {
  StateLists out;
  for (std::size_t i = 0; i < encoders.size(); ++i) encoders[i].collect(out, ".enc" + std::to_string(i + 1));
  bottom.collect(out, ".bottom");
  for (std::size_t i = 0; i < decoders.size(); ++i) decoders[i].collect(out, ".dec" + std::to_string(i + 1));
  return out;
}

Tensor stack_sides(const std::vector<Tensor>& sides, std::size_t out_h, std::size_t out_w) {
  std::vector<Tensor> resized;
  resized.reserve(sides.size());
  for (const auto& s : sides) {
    if (s.rank() != 4 || s.dim(1) != 1) throw DimensionError("side map must be [N,1,h,w], got " + shape_string(s.shape()));
    resized.push_back(s.dim(2) == out_h && s.dim(3) == out_w ? s : upsample_bilinear(s, out_h, out_w));
  }
  return concat_channels(resized);
}

CfBlock::CfBlock(Rng& rng) : squeeze(kInputs, 1, rng), out_conv(kInputs, 1, 3, 1, 1, true, rng) {}

Tensor CfBlock::forward(const std::vector<Tensor>& sides, std::size_t out_h, std::size_t out_w) const {
  if (sides.size() != kInputs) {
    throw ConfigError("CF block expects " + std::to_string(kInputs) + " side inputs, got " +
                      std::to_string(sides.size()));
  }
  Tensor stacked = stack_sides(sides, out_h, out_w);
  return out_conv.forward(squeeze.forward(stacked));
}

void CfBlock::collect(StateLists& out, const std::string& prefix) const {
  squeeze.collect(out, prefix + ".squeeze");
  out_conv.collect(out, prefix + ".out");
}

ConcatFusion::ConcatFusion(Rng& rng) : out_conv(CfBlock::kInputs, 1, 1, 0, 1, true, rng) {}

Tensor ConcatFusion::forward(const std::vector<Tensor>& sides, std::size_t out_h, std::size_t out_w) const {
  if (sides.size() != CfBlock::kInputs) {
    throw ConfigError("concat fusion expects " + std::to_string(CfBlock::kInputs) + " side inputs, got " +
                      std::to_string(sides.size()));
  }
  return out_conv.forward(stack_sides(sides, out_h, out_w));
}

void ConcatFusion::collect(StateLists& out, const std::string& prefix) const { out_conv.collect(out, prefix + ".out"); }

}  // namespace haru
