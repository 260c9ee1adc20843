#pragma once

#include <array>

#include "haru/network.hpp"

namespace haru {

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kBceGradFloor = 1e-12;  // floor on q(1-q) in the bce backward
inline constexpr double kDiceSmooth = 1e-6;

enum class BceReduction { Sum, Mean };

// Summed (or per-pixel mean) binary cross-entropy on probabilities clamped to [eps, 1-eps].
Tensor bce(const Tensor& pred, const Tensor& target, BceReduction reduction = BceReduction::Sum);

// Global soft Dice: 1 - (2·ΣPG + eps) / (ΣP² + ΣG² + eps).
Tensor dice_loss(const Tensor& pred, const Tensor& target);

struct LossWeights {
  double mask = 1.0;
  double edge = 1.0;
  std::array<double, 6> side{1.0, 1.0, 1.0, 1.0, 1.0, 1.0};  // shared by the mask and edge side terms
};

struct LossBreakdown {
  Tensor total;
  double zeta_mask = 0.0;  // fused mask map
  double tau_edge = 0.0;   // fused edge map
  std::array<double, 6> zeta_side{};
  std::array<double, 6> tau_side{};

  // Weighted sum of the parts recomputed from the scalar values.
  double recompose(const LossWeights& w) const;
};

LossBreakdown total_loss(const NetworkOutput& out, const Tensor& mask_gt, const Tensor& edge_gt, const LossWeights& w,
                         BceReduction reduction = BceReduction::Sum);

}  // namespace haru
