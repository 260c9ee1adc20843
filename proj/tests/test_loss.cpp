#include "haru/loss.hpp"

#include <cmath>

#include "test_util.hpp"

using namespace haru;
using haru::testing::leaf;

namespace {

// Per-pixel re-implementation, written against the formula rather than the library code.
double bce_oracle(const Tensor& p, const Tensor& g) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    double q = p.values()[i];
    if (q < 1e-7) q = 1e-7;
    if (q > 1.0 - 1e-7) q = 1.0 - 1e-7;
    const double t = g.values()[i];
    s += t > 0.5 ? -std::log(q) : -std::log(1.0 - q);
  }
  return s;
}

Tensor binary_target(Shape shape, std::uint64_t seed, double p = 0.4) {
  Rng rng(seed);
  std::bernoulli_distribution coin(p);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = coin(rng) ? 1.0 : 0.0;
  return t;
}

NetworkOutput random_output(std::uint64_t seed, Shape shape = {2, 1, 8, 8}) {
  NetworkOutput o;
  o.s_mask = leaf(shape, seed, 0.02, 0.98);
  o.s_edge = leaf(shape, seed + 1, 0.02, 0.98);
  for (std::size_t i = 0; i < 6; ++i) {
    o.mask_sides.push_back(leaf(shape, seed + 10 + i, 0.02, 0.98));
    o.edge_sides.push_back(leaf(shape, seed + 20 + i, 0.02, 0.98));
  }
  return o;
}

NetworkConfig micro_config() {
  NetworkConfig c;
  c.out_channels = {4, 4, 4, 4, 4, 4};
  c.mid_channels = {2, 2, 2, 2, 2, 2};
  c.heights = {3, 3, 2, 2, 2, 2};
  c.attention_reduction = 2;
  c.spatial_kernel = 3;
  return c;
}

}  // namespace

TEST_CASE("bce") {
  SUBCASE("perfect prediction") {
    Tensor g = binary_target({1, 1, 6, 7}, 1);
    const double v = bce(g, g).item();
    CHECK(v >= 0.0);
    CHECK(v <= 42 * -std::log(1.0 - 1e-7) * (1 + 1e-12));
  }
  SUBCASE("one half everywhere") {
    Tensor g = binary_target({1, 1, 6, 7}, 2);
    CHECK(bce(Tensor({1, 1, 6, 7}, 0.5), g).item() == doctest::Approx(42 * std::log(2.0)).epsilon(1e-14));
  }
  SUBCASE("matches the per-pixel oracle") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Tensor p = leaf({2, 1, 9, 5}, 100 + seed, 0.0, 1.0);
      p.values()[0] = 0.0;  // exercise both clamps
      p.values()[1] = 1.0;
      Tensor g = binary_target(p.shape(), 200 + seed);
      CHECK(bce(p, g).item() == doctest::Approx(bce_oracle(p, g)).epsilon(1e-13));
      CHECK(bce(p, g, BceReduction::Mean).item() ==
            doctest::Approx(bce_oracle(p, g) / static_cast<double>(p.numel())).epsilon(1e-13));
    }
  }
  SUBCASE("moving toward the target strictly decreases") {
    Tensor p = leaf({1, 1, 8, 8}, 3, 0.05, 0.95);
    Tensor g = binary_target(p.shape(), 4);
    double prev = bce(p, g).item();
    for (int step = 0; step < 10; ++step) {
      for (std::size_t i = 0; i < p.numel(); ++i) p.values()[i] += 0.3 * (g.values()[i] - p.values()[i]);
      const double now = bce(p, g).item();
      CHECK(now < prev);
      prev = now;
    }
  }
  SUBCASE("gradients") {
    Tensor p = leaf({2, 1, 5, 5}, 5, 0.05, 0.95);
    Tensor g = binary_target(p.shape(), 6);
    CHECK(finite_diff_check([&] { return bce(p, g); }, p) < 1e-6);
    CHECK(finite_diff_check([&] { return bce(p, g, BceReduction::Mean); }, p) < 1e-6);
  }
  SUBCASE("saturated sigmoid outputs keep a p - t logit gradient") {
    // Logits past the clamp band (|z| > 16) are flat in the forward value; the gradient must not die there.
    Tensor z(Shape{1, 1, 1, 4}, std::vector<double>{20.0, -25.0, 20.0, 3.0}, true);
    Tensor g(Shape{1, 1, 1, 4}, std::vector<double>{0.0, 1.0, 1.0, 0.0});
    backward(bce(sigmoid(z), g));
    for (std::size_t i = 0; i < 4; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-z.values()[i]));
      CHECK(z.grad()[i] == doctest::Approx(p - g.values()[i]).epsilon(1e-9));
    }
    CHECK(z.grad()[0] > 0.99);
    CHECK(z.grad()[1] < -0.99);
  }
  CHECK_THROWS_AS(bce(Tensor({1, 1, 4, 4}, 0.5), Tensor({1, 1, 4, 5})), DimensionError);
}

TEST_CASE("dice loss") {
  SUBCASE("perfect match") {
    Tensor g = binary_target({1, 1, 8, 8}, 7);
    CHECK(dice_loss(g, g).item() <= 1e-5);
  }
  SUBCASE("disjoint") {
    Tensor g = binary_target({1, 1, 8, 8}, 8);
    Tensor p(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) p.values()[i] = 1.0 - g.values()[i];
    CHECK(dice_loss(p, g).item() >= 1.0 - 1e-5);
  }
  SUBCASE("half confidence on an 8-pixel foreground") {
    Tensor g({1, 1, 4, 4});
    for (std::size_t i = 0; i < 8; ++i) g.values()[2 * i] = 1.0;
    Tensor p = scale(g, 0.5);
    CHECK(dice_loss(p, g).item() == doctest::Approx(0.2).epsilon(1e-6));
  }
  SUBCASE("gradients") {
    Tensor p = leaf({2, 1, 5, 5}, 9, 0.0, 1.0);
    Tensor g = binary_target(p.shape(), 10);
    CHECK(finite_diff_check([&] { return dice_loss(p, g); }, p) < 1e-6);
  }
  CHECK_THROWS_AS(dice_loss(Tensor({1, 1, 4, 4}), Tensor({1, 1, 5, 4})), DimensionError);
}

TEST_CASE("total loss") {
  const NetworkOutput out = random_output(30);
  const Tensor mask = binary_target({2, 1, 8, 8}, 31), edge = binary_target({2, 1, 8, 8}, 32, 0.2);

  SUBCASE("zero weights") {
    LossWeights w{0.0, 0.0, {0, 0, 0, 0, 0, 0}};
    CHECK(total_loss(out, mask, edge, w).total.item() == 0.0);
  }
  SUBCASE("single-term isolation") {
    LossWeights w{1.0, 0.0, {0, 0, 0, 0, 0, 0}};
    const double want = bce(out.s_mask, mask).item() + dice_loss(out.s_mask, mask).item();
    CHECK(total_loss(out, mask, edge, w).total.item() == doctest::Approx(want).epsilon(1e-14));
    w = LossWeights{0.0, 1.0, {0, 0, 0, 0, 0, 0}};
    const double want_edge = bce(out.s_edge, edge).item() + dice_loss(out.s_edge, edge).item();
    CHECK(total_loss(out, mask, edge, w).total.item() == doctest::Approx(want_edge).epsilon(1e-14));
    w = LossWeights{0.0, 0.0, {0, 0, 1, 0, 0, 0}};
    const double want_side = bce(out.mask_sides[2], mask).item() + dice_loss(out.mask_sides[2], mask).item() +
                             bce(out.edge_sides[2], edge).item() + dice_loss(out.edge_sides[2], edge).item();
    CHECK(total_loss(out, mask, edge, w).total.item() == doctest::Approx(want_side).epsilon(1e-14));
  }
  SUBCASE("recomposition of the fourteen parts") {
    const LossWeights w{};
    const LossBreakdown lb = total_loss(out, mask, edge, w);
    double manual = lb.zeta_mask + lb.tau_edge;
    for (std::size_t i = 0; i < 6; ++i) {
      manual += lb.zeta_side[i] + lb.tau_side[i];
      CHECK(lb.zeta_side[i] == doctest::Approx(bce_oracle(out.mask_sides[i], mask) +
                                               dice_loss(out.mask_sides[i], mask).item())
                                   .epsilon(1e-12));
    }
    CHECK(std::abs(lb.total.item() - manual) <= 1e-12 * manual);
    const LossWeights uneven{0.7, 1.3, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}};
    const LossBreakdown lb2 = total_loss(out, mask, edge, uneven);
    CHECK(std::abs(lb2.total.item() - lb2.recompose(uneven)) <= 1e-12 * lb2.total.item());
  }
  SUBCASE("nonnegative for nonnegative weights") {
    Rng rng(33);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
      LossWeights w{u(rng), u(rng), {u(rng), u(rng), u(rng), u(rng), u(rng), u(rng)}};
      const NetworkOutput o = random_output(40 + 30 * trial);
      CHECK(total_loss(o, mask, edge, w).total.item() >= 0.0);
    }
  }
  SUBCASE("contract errors") {
    NetworkOutput missing = out;
    missing.edge_sides.pop_back();
    CHECK_THROWS_AS(total_loss(missing, mask, edge, LossWeights{}), UsageError);
    LossWeights neg{};
    neg.side[3] = -1.0;
    CHECK_THROWS_AS(total_loss(out, mask, edge, neg), ConfigError);
  }
}

// Training-mode batch norm turns each weight gradient into a sum of large cancelling terms, so
// one ReLU or max-pool switch inside the probe interval moves the difference quotient by far
// more than 1e-4. Such coordinates are detected from the differences alone and dropped; at
// least half of the sampled coordinates must survive.
TEST_CASE("total loss gradients through a micro network") {
  Network net(micro_config());
  Tensor x = leaf({2, 3, 32, 32}, 50, 0.0, 1.0);
  const Tensor mask = binary_target({2, 1, 32, 32}, 51), edge = binary_target({2, 1, 32, 32}, 52, 0.2);
  auto f = [&] { return total_loss(net.forward(x), mask, edge, LossWeights{}).total; };
  auto check = [&](const Tensor& t, double eps) {
    FiniteDiffOptions o;
    o.eps = eps;
    o.skip_kinks = true;
    const FiniteDiffReport r = finite_diff_report(f, t, o);
    MESSAGE("checked " << r.checked << " skipped " << r.skipped << " max rel err " << r.max_rel_error);
    CHECK(2 * r.checked >= std::min<std::size_t>(t.numel(), o.max_coords));
    CHECK(r.max_rel_error < 1e-4);
  };
  check(x, 1e-6);
  check(net.encoders[0].input.conv.weight, 1e-7);  // touches every pixel: the tightest interval
  check(net.encoders[5].bottom.conv.weight, 1e-6);
  check(net.mask_branch.cf.out_conv.weight, 1e-6);
  check(net.edge_branch.side_convs[3].weight, 1e-6);
  check(net.edge_branch.deepest_skip.fc1.weight, 1e-6);
  check(net.mask_branch.skip_cbam[1].spatial.conv.weight, 1e-6);
}
