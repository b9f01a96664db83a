// SPDX-License-Identifier: Apache-2.0
//
// Teacher-side targets. Everything here is computed from plain tensor values
// with the teacher bound as constants, so no result can carry a gradient path
// back into a student graph.
#pragma once

#include <cstdint>
#include <vector>

#include "mtdet/detector.hpp"

namespace mtdet {

enum class EnsembleMode { kNone, kFlip, kRandomAug };

struct RpnTargets {
  Tensor objectness;  // {A, 2}, rows sum to 1
  Tensor deltas;      // {A, 4}
};

struct RoiTargets {
  Tensor probs;   // {P, C+1}, rows sum to 1
  Tensor deltas;  // {P, 4C}
};

struct SoftPseudoLabel {
  RpnTargets rpn;
  RoiTargets roi;
  std::vector<Box> proposals;  // S_P, sorted by teacher objectness
  std::vector<double> objectness;
};

struct HardPseudoGT {
  GroundTruth gt;
  std::vector<double> scores;
};

struct PseudoLabelSettings {
  int n_proposals = 640;
  double rpn_nms = 0.7;
  EnsembleMode ensemble = EnsembleMode::kFlip;
  std::uint64_t aug_seed = 0;  // second branch of the random-augmentation ensemble
  double fill = 127.5;         // cutout fill for that branch
};

RpnTargets teacher_rpn_targets(const ParamSet& teacher, const Tensor& weak_image);

/// Single-pass ROI targets (no ensemble).
RoiTargets teacher_roi_targets(const ParamSet& teacher, const Tensor& image, const std::vector<Box>& proposals);

/// Average of the ROI head on (image, P) and on (mirror(image), hflip(P)):
/// probabilities are averaged after softmax; mirrored-branch deltas have dx
/// negated for every class before averaging.
RoiTargets teacher_ensemble_roi(const ParamSet& teacher, const Tensor& image, const std::vector<Box>& proposals);

/// Same averaging, with a strong-augmented copy as the second branch and no
/// geometric correction.
RoiTargets random_aug_ensemble_roi(const ParamSet& teacher, const Tensor& image, const std::vector<Box>& proposals,
                                   std::uint64_t seed, double fill = 127.5);

/// Top-N proposals, all-anchor RPN targets and ROI targets on those proposals.
SoftPseudoLabel make_soft_label(const ParamSet& teacher, const Tensor& weak_image, const PseudoLabelSettings& s);

/// Keeps detections with score >= theta.
HardPseudoGT filter_hard_labels(const std::vector<ScoredBox>& detections, double theta);

/// Teacher detections (per-class NMS) kept at score >= theta.
HardPseudoGT make_hard_label(const ParamSet& teacher, const Tensor& weak_image, double theta, double nms_thresh,
                             const DetectorSettings& s = {});

/// Mean over proposals of the largest foreground-class probability.
double mean_max_confidence(const RoiTargets& roi);

}  // namespace mtdet
