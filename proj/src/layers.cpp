#include "haru/layers.hpp"

#include <algorithm>

namespace haru {

Conv2d::Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t pad, std::size_t dilation,
               bool with_bias, Rng& rng)
    : weight({out_ch, in_ch, kernel, kernel}, 0.0, true), pad_(pad), dilation_(dilation) {
  kaiming_uniform(weight, in_ch * kernel * kernel, rng);
  if (with_bias) bias = Tensor({out_ch}, 0.0, true);
}

void Conv2d::collect(StateLists& out, const std::string& prefix) const {
  out.parameters.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.parameters.push_back({prefix + ".bias", bias});
}

Linear::Linear(std::size_t in_features, std::size_t out_features, Rng& rng)
    : weight({out_features, in_features}, 0.0, true), bias({out_features}, 0.0, true) {
  kaiming_uniform(weight, in_features, rng);
}

void Linear::collect(StateLists& out, const std::string& prefix) const {
  out.parameters.push_back({prefix + ".weight", weight});
  out.parameters.push_back({prefix + ".bias", bias});
}

BatchNorm2d::BatchNorm2d(std::size_t channels)
    : gamma({channels}, 1.0, true), beta({channels}, 0.0, true) {
  state.running_mean = Tensor({channels}, 0.0);
  state.running_var = Tensor({channels}, 1.0);
}

void BatchNorm2d::collect(StateLists& out, const std::string& prefix) const {
  out.parameters.push_back({prefix + ".gamma", gamma});
  out.parameters.push_back({prefix + ".beta", beta});
  out.buffers.push_back({prefix + ".running_mean", state.running_mean});
  out.buffers.push_back({prefix + ".running_var", state.running_var});
}

ConvBnRelu::ConvBnRelu(std::size_t in_ch, std::size_t out_ch, std::size_t dilation, Rng& rng)
    : conv(in_ch, out_ch, 3, dilation, dilation, false, rng), bn(out_ch) {}

void ConvBnRelu::collect(StateLists& out, const std::string& prefix) const {
  conv.collect(out, prefix + ".conv");
  bn.collect(out, prefix + ".bn");
}

void fill_all(const ParamList& list, double v) {
  for (const auto& p : list) {
    Tensor t = p.tensor;
    std::fill(t.values().begin(), t.values().end(), v);
  }
}

std::size_t count_values(const ParamList& list) {
  std::size_t n = 0;
  for (const auto& p : list) n += p.tensor.numel();
  return n;
}

}  // namespace haru
