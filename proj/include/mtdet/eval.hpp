// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mtdet/detector.hpp"
#include "mtdet/geometry.hpp"

namespace mtdet {

/// {0.50, 0.55, ..., 0.95}
std::vector<double> coco_iou_thresholds();

struct MapResult {
  std::vector<double> thresholds;
  std::vector<int> classes;                 // classes with at least one GT box
  std::vector<std::vector<double>> ap;      // [class index][threshold index]
  std::vector<double> ap_per_threshold;     // mean over classes
  double ap50 = 0;                          // at threshold 0.5 when present
  double map = 0;                           // mean over thresholds
};

/// All-point interpolated AP of one class from detections ordered by score.
/// `tp` flags each ranked detection; `num_gt` > 0.
double average_precision(const std::vector<bool>& tp, int num_gt);

/// Greedy score-descending matching per class and threshold: each detection
/// takes the highest-IoU unmatched GT of its class in the same image, counting
/// as a true positive when that IoU reaches the threshold. Classes without GT
/// are excluded from every average.
MapResult evaluate_map(const std::vector<std::vector<ScoredBox>>& detections, const std::vector<GroundTruth>& gt,
                       const std::vector<double>& iou_thresholds = coco_iou_thresholds());

}  // namespace mtdet
