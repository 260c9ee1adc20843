#include "haru/metrics.hpp"

#include "generators.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace haru;

namespace {

InstanceMap parse(const std::vector<std::string>& rows) {
  InstanceMap m(rows.size(), rows[0].size(), 0);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c] == '.' ? 0 : rows[r][c] - '0';
  return m;
}

double pixel_iou(const InstanceMap& a, const InstanceMap& b) {
  double i = 0, u = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    i += a.data[k] && b.data[k];
    u += a.data[k] || b.data[k];
  }
  return u == 0 ? 1.0 : i / u;
}

}  // namespace

TEST_CASE("dice metric") {
  const BinaryMap a = foreground(parse({"11..", "11.."}));
  CHECK(dice_metric(a, a) == 1.0);
  CHECK(dice_metric(a, foreground(parse({"..11", "..11"}))) == 0.0);
  // TP=2, FP=0, FN=2
  CHECK(dice_metric(foreground(parse({"11..", "...."})), a) == doctest::Approx(4.0 / 6.0).epsilon(1e-15));
  CHECK(dice_metric(BinaryMap(2, 2, 0), BinaryMap(2, 2, 0)) == 1.0);
  const ConfusionCounts cc = pixel_counts(foreground(parse({"11.1"})), foreground(parse({"1..1"})));
  CHECK(cc.tp == 2);
  CHECK(cc.fp == 1);
  CHECK(cc.fn == 0);
  CHECK_THROWS_AS(dice_metric(BinaryMap(2, 2), BinaryMap(2, 3)), DimensionError);
}

TEST_CASE("match_instances") {
  const InstanceMap gt = parse({"11.22", "11.22"});
  const MatchResult self = match_instances(gt, gt);
  CHECK(self.pairs.size() == 2);
  for (const auto& p : self.pairs) CHECK(p.iou == 1.0);
  CHECK(self.unmatched_gt.empty());
  CHECK(self.unmatched_pred.empty());

  const MatchResult none = match_instances(InstanceMap(2, 5, 0), gt);
  CHECK(none.pairs.empty());
  CHECK(none.unmatched_gt == std::vector<std::int32_t>{1, 2});
  CHECK_THROWS_AS(match_instances(gt, gt, 0.4), UsageError);

  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto [g, p] = gen::gt_pred_pair(rng);
    const MatchResult m = match_instances(p, g);
    const auto want = oracle::all_pairs_matches(p, g);
    REQUIRE(m.pairs.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(m.pairs[i].gt == want[i].gt);
      CHECK(m.pairs[i].pred == want[i].pred);
      CHECK(m.pairs[i].iou == doctest::Approx(want[i].iou).epsilon(1e-15));
    }
    CHECK(m.pairs.size() + m.unmatched_gt.size() == oracle::pixel_sets(g).size());
    CHECK(m.pairs.size() + m.unmatched_pred.size() == oracle::pixel_sets(p).size());
  }
}

TEST_CASE("pq") {
  const InstanceMap gt = parse({"11.22", "11.22", "...33"});
  CHECK(pq(gt, gt) == 1.0);
  CHECK(pq(parse({"....1", "1....", "....."}), gt) == 0.0);
  CHECK(pq(InstanceMap(3, 5, 0), InstanceMap(3, 5, 0)) == 1.0);
  CHECK(pq(InstanceMap(3, 5, 0), gt) == 0.0);
  // one gt of 5 px, one pred of 3 px inside it: IoU 3/5
  const InstanceMap g1 = parse({"11111"}), p1 = parse({".111."});
  CHECK(pq(p1, g1) == doctest::Approx(0.6).epsilon(1e-15));
}

TEST_CASE("aji") {
  const InstanceMap gt = parse({"11..", "11..", "....", "...."});
  CHECK(aji(gt, gt) == 1.0);
  CHECK(aji(InstanceMap(4, 4, 0), gt) == 0.0);
  CHECK(aji(InstanceMap(4, 4, 0), InstanceMap(4, 4, 0)) == 1.0);
  // 4-px gt, a 4-px prediction overlapping 2 px, and a 3-px spurious prediction: 2 / (6 + 3)
  const InstanceMap pred = parse({".11.", ".11.", "....", "222."});
  CHECK(aji(pred, gt) == doctest::Approx(2.0 / 9.0).epsilon(1e-15));
  // Greedy order matters: the first gt claims the shared prediction.
  const InstanceMap g2 = parse({"1122"}), p2 = parse({"1111"});
  CHECK(aji(p2, g2) == doctest::Approx(2.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("metrics against brute force on random pairs") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const auto [g, p] = gen::gt_pred_pair(rng);
    CHECK(std::abs(dice_metric(foreground(p), foreground(g)) - oracle::dice(p, g)) <= 1e-12);
    CHECK(std::abs(pq(p, g) - oracle::pq(p, g)) <= 1e-12);
    const double a = aji(p, g);
    CHECK(std::abs(a - oracle::aji_ascending(oracle::canonical(p), oracle::canonical(g))) <= 1e-12);

    for (double v : {dice_metric(foreground(p), foreground(g)), pq(p, g), a}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(a <= pixel_iou(p, g) + 1e-15);
    CHECK(dice_metric(foreground(p), foreground(g)) == dice_metric(foreground(g), foreground(p)));
    CHECK(pq(g, g) == 1.0);
    CHECK(aji(g, g) == 1.0);

    // Relabelling either map changes nothing, bit for bit.
    const InstanceMap g2 = gen::permute_ids(g, rng), p2 = gen::permute_ids(p, rng);
    CHECK(aji(p2, g2) == a);
    CHECK(aji(p2, g) == a);
    CHECK(pq(p2, g2) == pq(p, g));
    CHECK(dice_metric(foreground(p2), foreground(g2)) == dice_metric(foreground(p), foreground(g)));
  }
}

TEST_CASE("dataset report") {
  const InstanceMap gt = parse({"11..", "11..", "....", "...."});
  const InstanceMap pred = parse({".11.", ".11.", "....", "222."});
  const MetricReport r = evaluate_dataset({gt, pred}, {gt, gt}, {"a", "b"});
  REQUIRE(r.images.size() == 2);
  CHECK(r.images[0].aji == 1.0);
  CHECK(r.mean_aji == doctest::Approx((1.0 + 2.0 / 9.0) / 2.0).epsilon(1e-15));
  CHECK(r.images[1].instances.fp == 2);
  CHECK(r.images[1].instances.fn == 1);

  const std::string kv = format_report_kv(r);
  CHECK(kv.find("ids\ta b\t-\n") == 0);
  CHECK(kv.find("\naji\t1 ") != std::string::npos);
  const std::string table = format_report_table(r);
  CHECK(table.find("mean") != std::string::npos);
  CHECK(std::count(table.begin(), table.end(), '\n') == 4);
  CHECK_THROWS_AS(evaluate_dataset({gt}, {gt, gt}), UsageError);
}
