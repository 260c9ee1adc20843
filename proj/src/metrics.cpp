#include "haru/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>

#include "haru/keyvalue.hpp"

namespace haru {

namespace {

struct Overlap {
  std::map<std::int32_t, std::size_t> gt_size;
  std::map<std::int32_t, std::size_t> pred_size;
  std::map<std::pair<std::int32_t, std::int32_t>, std::size_t> inter;  // (gt, pred)
  std::map<std::int32_t, std::size_t> gt_first;                        // first raster index
  std::map<std::int32_t, std::size_t> pred_first;
};

Overlap tabulate(const InstanceMap& pred, const InstanceMap& gt) {
  require_same_shape(pred, gt, "instance metrics");
  Overlap o;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const std::int32_t g = gt.data[i], p = pred.data[i];
    if (g > 0) {
      ++o.gt_size[g];
      o.gt_first.emplace(g, i);
    }
    if (p > 0) {
      ++o.pred_size[p];
      o.pred_first.emplace(p, i);
    }
    if (g > 0 && p > 0) ++o.inter[{g, p}];
  }
  return o;
}

}  // namespace

ConfusionCounts pixel_counts(const BinaryMap& pred, const BinaryMap& gt) {
  require_same_shape(pred, gt, "dice_metric");
  ConfusionCounts c;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
  }
  return c;
}

double dice_metric(const BinaryMap& pred, const BinaryMap& gt) {
  const ConfusionCounts c = pixel_counts(pred, gt);
  const std::size_t den = 2 * c.tp + c.fp + c.fn;
  return den == 0 ? 1.0 : static_cast<double>(2 * c.tp) / static_cast<double>(den);
}

MatchResult match_instances(const InstanceMap& pred, const InstanceMap& gt, double iou_threshold) {
  if (iou_threshold < 0.5) throw UsageError("match_instances: IoU threshold must be >= 0.5");
  const Overlap o = tabulate(pred, gt);
  MatchResult m;
  std::map<std::int32_t, bool> pred_used;
  std::map<std::int32_t, bool> gt_used;
  for (const auto& [key, n] : o.inter) {
    const auto [g, p] = key;
    const std::size_t uni = o.gt_size.at(g) + o.pred_size.at(p) - n;
    const double iou = static_cast<double>(n) / static_cast<double>(uni);
    if (iou > iou_threshold) {
      m.pairs.push_back({g, p, iou});
      gt_used[g] = true;
      pred_used[p] = true;
    }
  }
  for (const auto& [g, n] : o.gt_size) {
    if (!gt_used.count(g)) m.unmatched_gt.push_back(g);
  }
  for (const auto& [p, n] : o.pred_size) {
    if (!pred_used.count(p)) m.unmatched_pred.push_back(p);
  }
  return m;
}

double pq(const InstanceMap& pred, const InstanceMap& gt) {
  const MatchResult m = match_instances(pred, gt, 0.5);
  const std::size_t tp = m.pairs.size(), fp = m.unmatched_pred.size(), fn = m.unmatched_gt.size();
  if (tp + fp + fn == 0) return 1.0;
  if (tp == 0) return 0.0;
  // Summing in sorted order keeps the result independent of label numbering.
  std::vector<double> ious;
  for (const auto& pair : m.pairs) ious.push_back(pair.iou);
  std::sort(ious.begin(), ious.end());
  const double iou_sum = std::accumulate(ious.begin(), ious.end(), 0.0);
  const double f1 = static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
  return f1 * (iou_sum / static_cast<double>(tp));
}

double aji(const InstanceMap& pred, const InstanceMap& gt) {
  const Overlap o = tabulate(pred, gt);
  std::map<std::int32_t, std::vector<std::pair<std::int32_t, std::size_t>>> by_gt;
  for (const auto& [key, n] : o.inter) by_gt[key.first].emplace_back(key.second, n);

  std::vector<std::int32_t> gt_order;
  for (const auto& [g, n] : o.gt_size) gt_order.push_back(g);
  std::sort(gt_order.begin(), gt_order.end(),
            [&](std::int32_t a, std::int32_t b) { return o.gt_first.at(a) < o.gt_first.at(b); });

  std::map<std::int32_t, bool> used;
  std::size_t inter_total = 0, union_total = 0;
  for (std::int32_t g : gt_order) {
    const std::size_t gs = o.gt_size.at(g);
    std::int32_t best = 0;
    std::size_t best_inter = 0, best_union = 1;
    for (const auto& [p, n] : by_gt[g]) {
      if (used.count(p)) continue;
      const std::size_t uni = gs + o.pred_size.at(p) - n;
      if (best == 0) {
        best = p, best_inter = n, best_union = uni;
        continue;
      }
      // n/uni vs best_inter/best_union, compared exactly.
      const auto lhs = static_cast<unsigned long long>(n) * best_union;
      const auto rhs = static_cast<unsigned long long>(best_inter) * uni;
      if (lhs > rhs || (lhs == rhs && o.pred_first.at(p) < o.pred_first.at(best))) {
        best = p, best_inter = n, best_union = uni;
      }
    }
    if (best == 0) {
      union_total += gs;
    } else {
      used[best] = true;
      inter_total += best_inter;
      union_total += best_union;
    }
  }
  for (const auto& [p, n] : o.pred_size) {
    if (!used.count(p)) union_total += n;
  }
  if (union_total == 0) return 1.0;
  return static_cast<double>(inter_total) / static_cast<double>(union_total);
}

ImageMetrics evaluate_image(const InstanceMap& pred, const InstanceMap& gt, const std::string& id) {
  ImageMetrics m;
  m.id = id;
  m.dice = dice_metric(foreground(pred), foreground(gt));
  m.aji = aji(pred, gt);
  m.pq = pq(pred, gt);
  const MatchResult match = match_instances(pred, gt, 0.5);
  m.instances = {match.pairs.size(), match.unmatched_pred.size(), match.unmatched_gt.size()};
  return m;
}

MetricReport evaluate_dataset(const std::vector<InstanceMap>& preds, const std::vector<InstanceMap>& gts,
                              const std::vector<std::string>& ids) {
  if (preds.size() != gts.size()) {
    throw UsageError("evaluate_dataset: " + std::to_string(preds.size()) + " predictions for " +
                     std::to_string(gts.size()) + " ground truths");
  }
  MetricReport r;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::string id = i < ids.size() ? ids[i] : std::to_string(i);
    r.images.push_back(evaluate_image(preds[i], gts[i], id));
  }
  if (!r.images.empty()) {
    const double n = static_cast<double>(r.images.size());
    for (const auto& m : r.images) {
      r.mean_dice += m.dice;
      r.mean_aji += m.aji;
      r.mean_pq += m.pq;
    }
    r.mean_dice /= n;
    r.mean_aji /= n;
    r.mean_pq /= n;
  }
  return r;
}

std::string format_report_table(const MetricReport& report) {
  std::size_t width = 5;
  for (const auto& m : report.images) width = std::max(width, m.id.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %8s %8s %8s %5s %5s %5s\n", static_cast<int>(width), "image", "dice", "aji",
                "pq", "tp", "fp", "fn");
  out += buf;
  for (const auto& m : report.images) {
    std::snprintf(buf, sizeof buf, "%-*s %8.4f %8.4f %8.4f %5zu %5zu %5zu\n", static_cast<int>(width), m.id.c_str(),
                  m.dice, m.aji, m.pq, m.instances.tp, m.instances.fp, m.instances.fn);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%-*s %8.4f %8.4f %8.4f\n", static_cast<int>(width), "mean", report.mean_dice,
                report.mean_aji, report.mean_pq);
  out += buf;
  return out;
}

std::string format_report_kv(const MetricReport& report) {
  auto line = [&](const char* name, double ImageMetrics::*field, double mean) {
    std::string s = std::string(name) + "\t";
    for (std::size_t i = 0; i < report.images.size(); ++i) {
      s += (i ? " " : "") + format_double(report.images[i].*field);
    }
    return s + "\t" + format_double(mean) + "\n";
  };
  std::string ids = "ids\t";
  for (std::size_t i = 0; i < report.images.size(); ++i) ids += (i ? " " : "") + report.images[i].id;
  return ids + "\t-\n" + line("dice", &ImageMetrics::dice, report.mean_dice) +
         line("aji", &ImageMetrics::aji, report.mean_aji) + line("pq", &ImageMetrics::pq, report.mean_pq);
}

}  // namespace haru
