// SPDX-License-Identifier: Apache-2.0
#include "mtdet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace mtdet {

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

double average_precision(const std::vector<bool>& tp, int num_gt) {
  if (num_gt <= 0) throw std::invalid_argument("average_precision: num_gt must be positive");
  const std::size_t n = tp.size();
  std::vector<double> precision(n), recall(n);
  int hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    hits += tp[i] ? 1 : 0;
    precision[i] = static_cast<double>(hits) / (i + 1);
    recall[i] = static_cast<double>(hits) / num_gt;
  }
  // Precision envelope, then area under the step function.
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

MapResult evaluate_map(const std::vector<std::vector<ScoredBox>>& detections, const std::vector<GroundTruth>& gt,
                       const std::vector<double>& iou_thresholds) {
  if (detections.size() != gt.size()) throw std::invalid_argument("evaluate_map: detections and GT image counts differ");
  if (!std::is_sorted(iou_thresholds.begin(), iou_thresholds.end())) {
    throw std::invalid_argument("evaluate_map: thresholds must be sorted");
  }
  MapResult r;
  r.thresholds = iou_thresholds;
  std::set<int> classes;
  for (const GroundTruth& g : gt)
    for (const GtObject& o : g) classes.insert(o.class_id);
  r.classes.assign(classes.begin(), classes.end());

  struct Ranked {
    double score;
    std::size_t image;
    std::size_t index;
  };
  for (int cls : r.classes) {
    std::vector<Ranked> ranked;
    int num_gt = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      for (std::size_t k = 0; k < detections[i].size(); ++k)
        if (detections[i][k].class_id == cls) ranked.push_back({detections[i][k].score, i, k});
      for (const GtObject& o : gt[i]) num_gt += o.class_id == cls ? 1 : 0;
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

    std::vector<double> per_t;
    for (double thresh : iou_thresholds) {
      std::vector<std::vector<char>> used(gt.size());
      for (std::size_t i = 0; i < gt.size(); ++i) used[i].assign(gt[i].size(), 0);
      std::vector<bool> tp;
      tp.reserve(ranked.size());
      for (const Ranked& d : ranked) {
        const Box& box = detections[d.image][d.index].box;
        const GroundTruth& g = gt[d.image];
        int best = -1;
        double best_iou = 0;
        for (std::size_t j = 0; j < g.size(); ++j) {
          if (g[j].class_id != cls || used[d.image][j]) continue;
          const double v = iou(box, g[j].box);
          if (v >= thresh && (best < 0 || v > best_iou)) {
            best_iou = v;
            best = static_cast<int>(j);
          }
        }
        if (best >= 0) used[d.image][best] = 1;
        tp.push_back(best >= 0);
      }
      per_t.push_back(average_precision(tp, num_gt));
    }
    r.ap.push_back(std::move(per_t));
  }

  r.ap_per_threshold.assign(iou_thresholds.size(), 0.0);
  if (!r.classes.empty()) {
    for (std::size_t t = 0; t < iou_thresholds.size(); ++t) {
      for (const auto& row : r.ap) r.ap_per_threshold[t] += row[t];
      r.ap_per_threshold[t] /= static_cast<double>(r.classes.size());
    }
    for (double v : r.ap_per_threshold) r.map += v;
    r.map /= static_cast<double>(iou_thresholds.size());
  }
  for (std::size_t t = 0; t < iou_thresholds.size(); ++t) {
    if (std::abs(iou_thresholds[t] - 0.5) < 1e-12) r.ap50 = r.ap_per_threshold[t];
  }
  return r;
}

}  // namespace mtdet
