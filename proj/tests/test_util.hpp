#pragma once

#include <doctest.h>

#include <cmath>
#include <random>

#include "haru/grid.hpp"
#include "haru/tensor.hpp"

namespace haru::testing {

// Scalar probe Σ r_i·t_i with fixed random r, so every output element matters to the gradient.
inline Tensor probe(const Tensor& t, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(t, random_tensor(t.shape(), rng, 0.5, 1.5)));
}

inline Tensor leaf(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return random_tensor(std::move(shape), rng, lo, hi, true);
}

inline bool same_values(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (a.values()[i] != b.values()[i]) return false;
  }
  return true;
}

inline BinaryMap random_binary(Rng& rng, std::size_t h, std::size_t w, double p) {
  std::bernoulli_distribution coin(p);
  BinaryMap b(h, w);
  for (auto& v : b.data) v = coin(rng) ? 1 : 0;
  return b;
}

}  // namespace haru::testing
