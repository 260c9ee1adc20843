#pragma once

#include <string>
#include <vector>

#include "haru/grid.hpp"

namespace haru {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

struct MatchPair {
  std::int32_t gt = 0;
  std::int32_t pred = 0;
  double iou = 0.0;
};

struct MatchResult {
  std::vector<MatchPair> pairs;  // ascending gt id
  std::vector<std::int32_t> unmatched_gt;
  std::vector<std::int32_t> unmatched_pred;
};

ConfusionCounts pixel_counts(const BinaryMap& pred, const BinaryMap& gt);
// 2TP / (2TP + FP + FN); 1.0 when both maps are empty.
double dice_metric(const BinaryMap& pred, const BinaryMap& gt);

// Pairs (g, p) with IoU(g, p) > iou_threshold. Thresholds below 0.5 are rejected because
// the pairing is only one-to-one from 0.5 upward.
MatchResult match_instances(const InstanceMap& pred, const InstanceMap& gt, double iou_threshold = 0.5);

// Instance F1 times mean matched IoU; 1.0 when both maps are empty, 0.0 when nothing matches.
double pq(const InstanceMap& pred, const InstanceMap& gt);

// Aggregated Jaccard index with greedy one-to-one matching. Ground-truth instances are visited
// in order of first appearance (row-major) and each takes the unused prediction of highest
// Jaccard; ties go to the prediction that appears first. For label maps whose ids already
// follow first appearance this is plain ascending-id order.
double aji(const InstanceMap& pred, const InstanceMap& gt);

struct ImageMetrics {
  std::string id;
  double dice = 0.0;
  double aji = 0.0;
  double pq = 0.0;
  ConfusionCounts instances;  // PQ matching counts
};

struct MetricReport {
  std::vector<ImageMetrics> images;
  double mean_dice = 0.0;
  double mean_aji = 0.0;
  double mean_pq = 0.0;
};

ImageMetrics evaluate_image(const InstanceMap& pred, const InstanceMap& gt, const std::string& id = {});
MetricReport evaluate_dataset(const std::vector<InstanceMap>& preds, const std::vector<InstanceMap>& gts,
                              const std::vector<std::string>& ids = {});

// Aligned text table: one row per image plus a mean row.
std::string format_report_table(const MetricReport& report);
// One line per metric: "<name>\t<v1> <v2> ...\t<mean>".
std::string format_report_kv(const MetricReport& report);

}  // namespace haru
