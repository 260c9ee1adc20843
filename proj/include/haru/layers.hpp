#pragma once

#include <string>
#include <vector>

#include "haru/tensor.hpp"

namespace haru {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

// Trainable weights plus persistent, non-trainable state (batch-norm running stats).
struct StateLists {
  ParamList parameters;
  ParamList buffers;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t pad, std::size_t dilation,
         bool with_bias, Rng& rng);

  Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, 1, pad_, dilation_); }
  void collect(StateLists& out, const std::string& prefix) const;

  Tensor weight;
  Tensor bias;  // undefined when bias-free

 private:
  std::size_t pad_ = 0;
  std::size_t dilation_ = 1;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features, Rng& rng);

  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(StateLists& out, const std::string& prefix) const;

  Tensor weight;
  Tensor bias;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels);

  Tensor forward(const Tensor& x, bool training) { return batch_norm(x, gamma, beta, state, training); }
  void collect(StateLists& out, const std::string& prefix) const;

  Tensor gamma;
  Tensor beta;
  BatchNormState state;
};

// conv3x3 (dilated, zero-padded to keep H×W) + batch norm + ReLU.
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(std::size_t in_ch, std::size_t out_ch, std::size_t dilation, Rng& rng);

  Tensor forward(const Tensor& x, bool training) { return relu(bn.forward(conv.forward(x), training)); }
  void collect(StateLists& out, const std::string& prefix) const;

  Conv2d conv;
  BatchNorm2d bn;
};

// Sets every value of every listed tensor to v.
void fill_all(const ParamList& list, double v);
std::size_t count_values(const ParamList& list);

}  // namespace haru
