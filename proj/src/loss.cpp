#include "haru/loss.hpp"

#include <algorithm>
#include <cmath>

namespace haru {

namespace {

void check_pair(const Tensor& pred, const Tensor& target, const char* what) {
  if (pred.shape() != target.shape()) {
    throw DimensionError(std::string(what) + ": prediction " + shape_string(pred.shape()) + " vs target " +
                         shape_string(target.shape()));
  }
}

}  // namespace

Tensor bce(const Tensor& pred, const Tensor& target, BceReduction reduction) {
  check_pair(pred, target, "bce");
  const auto p = pred.values();
  const auto g = target.values();
  const double norm = reduction == BceReduction::Mean ? 1.0 / static_cast<double>(p.size()) : 1.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
    acc -= g[i] * std::log(q) + (1.0 - g[i]) * std::log(1.0 - q);
  }
  auto pd = pred.data(), gd = target.data();
  return make_result(
      {1}, {acc * norm}, {pred},
      [pd, gd, norm](const TensorData& o) {
        const double up = o.grad[0] * norm;
        // (q - t) / (q(1-q)) is the exact derivative inside the clamp band. Outside it the
        // forward is flat, but a zero gradient would strand saturated wrong pixels for good,
        // so the denominator is floored instead and p - t survives through a sigmoid.
        for (std::size_t i = 0; i < pd->values.size(); ++i) {
          const double q = pd->values[i];
          const double t = gd->values[i];
          pd->grad[i] += up * (q - t) / std::max(q * (1.0 - q), kBceGradFloor);
        }
      },
      "bce");
}

Tensor dice_loss(const Tensor& pred, const Tensor& target) {
  check_pair(pred, target, "dice_loss");
  const auto p = pred.values();
  const auto g = target.values();
  double inter = 0.0, pp = 0.0, gg = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += p[i] * g[i];
    pp += p[i] * p[i];
    gg += g[i] * g[i];
  }
  const double num = 2.0 * inter + kDiceSmooth;
  const double den = pp + gg + kDiceSmooth;
  auto pd = pred.data(), gd = target.data();
  return make_result(
      {1}, {1.0 - num / den}, {pred},
      [pd, gd, num, den](const TensorData& o) {
        // d/dp [1 - num/den] = -(2g·den - num·2p) / den²
        const double up = o.grad[0];
        for (std::size_t i = 0; i < pd->values.size(); ++i) {
          const double d = -(2.0 * gd->values[i] * den - num * 2.0 * pd->values[i]) / (den * den);
          pd->grad[i] += up * d;
        }
      },
      "dice_loss");
}

double LossBreakdown::recompose(const LossWeights& w) const {
  double acc = w.edge * tau_edge + w.mask * zeta_mask;
  for (std::size_t i = 0; i < 6; ++i) acc += w.side[i] * tau_side[i] + w.side[i] * zeta_side[i];
  return acc;
}

LossBreakdown total_loss(const NetworkOutput& out, const Tensor& mask_gt, const Tensor& edge_gt, const LossWeights& w,
                         BceReduction reduction) {
  if (out.mask_sides.size() != 6 || out.edge_sides.size() != 6) {
    throw UsageError("total_loss: expected 6 side maps per branch, got " + std::to_string(out.mask_sides.size()) +
                     " and " + std::to_string(out.edge_sides.size()));
  }
  for (double v : w.side) {
    if (v < 0.0) throw ConfigError("loss weights must be >= 0");
  }
  if (w.mask < 0.0 || w.edge < 0.0) throw ConfigError("loss weights must be >= 0");

  LossBreakdown lb;
  auto term = [&](const Tensor& pred, const Tensor& target, double& value) {
    Tensor t = add(bce(pred, target, reduction), dice_loss(pred, target));
    value = t.item();
    return t;
  };
  Tensor total = scale(term(out.s_mask, mask_gt, lb.zeta_mask), w.mask);
  total = add(total, scale(term(out.s_edge, edge_gt, lb.tau_edge), w.edge));
  for (std::size_t i = 0; i < 6; ++i) {
    total = add(total, scale(term(out.edge_sides[i], edge_gt, lb.tau_side[i]), w.side[i]));
    total = add(total, scale(term(out.mask_sides[i], mask_gt, lb.zeta_side[i]), w.side[i]));
  }
  lb.total = total;
  return lb;
}

}  // namespace haru
