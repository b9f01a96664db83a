// SPDX-License-Identifier: Apache-2.0
#include "mtdet/pseudo_label.hpp"

#include <algorithm>
#include <stdexcept>

#include "mtdet/augment.hpp"

namespace mtdet {

namespace {

RoiTargets single_branch(const ParamSet& teacher, const Tensor& features, const std::vector<Box>& proposals) {
  RoiOutput out = roi_values(teacher, features, proposals);
  return {softmax_rows(out.logits), std::move(out.deltas)};
}

RoiTargets average(const RoiTargets& a, const RoiTargets& b, bool mirror_b) {
  RoiTargets r{a.probs, a.deltas};
  for (std::size_t i = 0; i < r.probs.size(); ++i) r.probs[i] = 0.5 * (a.probs[i] + b.probs[i]);
  for (std::size_t i = 0; i < r.deltas.size(); ++i) {
    const double other = (mirror_b && i % 4 == 0) ? -b.deltas[i] : b.deltas[i];
    r.deltas[i] = 0.5 * (a.deltas[i] + other);
  }
  return r;
}

RoiTargets flip_ensemble(const ParamSet& teacher, const Tensor& image, const Tensor& features,
                         const std::vector<Box>& proposals) {
  const double width = image.dim(2);
  std::vector<Box> mirrored;
  mirrored.reserve(proposals.size());
  for (const Box& b : proposals) mirrored.push_back(hflip_box(b, width));
  const RoiTargets a = single_branch(teacher, features, proposals);
  const RoiTargets b = single_branch(teacher, backbone_values(teacher, hflip_image(image)), mirrored);
  return average(a, b, true);
}

RoiTargets random_aug_ensemble(const ParamSet& teacher, const Tensor& image, const Tensor& features,
                               const std::vector<Box>& proposals, std::uint64_t seed, double fill) {
  const Tensor aug = apply_strong(image, plan_strong(seed, image.dim(1), fill));
  const RoiTargets a = single_branch(teacher, features, proposals);
  const RoiTargets b = single_branch(teacher, backbone_values(teacher, aug), proposals);
  return average(a, b, false);
}

}  // namespace

RpnTargets teacher_rpn_targets(const ParamSet& teacher, const Tensor& weak_image) {
  RpnOutput rpn = rpn_values(teacher, backbone_values(teacher, weak_image));
  return {softmax_rows(rpn.logits), std::move(rpn.deltas)};
}

RoiTargets teacher_roi_targets(const ParamSet& teacher, const Tensor& image, const std::vector<Box>& proposals) {
  return single_branch(teacher, backbone_values(teacher, image), proposals);
}

RoiTargets teacher_ensemble_roi(const ParamSet& teacher, const Tensor& image, const std::vector<Box>& proposals) {
  return flip_ensemble(teacher, image, backbone_values(teacher, image), proposals);
}

RoiTargets random_aug_ensemble_roi(const ParamSet& teacher, const Tensor& image, const std::vector<Box>& proposals,
                                   std::uint64_t seed, double fill) {
  return random_aug_ensemble(teacher, image, backbone_values(teacher, image), proposals, seed, fill);
}

SoftPseudoLabel make_soft_label(const ParamSet& teacher, const Tensor& weak_image, const PseudoLabelSettings& s) {
  if (s.n_proposals < 1) throw std::invalid_argument("make_soft_label: N must be >= 1");
  const DetectorConfig cfg = detector_config_of(teacher);
  const int h = weak_image.dim(1), w = weak_image.dim(2);
  const Tensor features = backbone_values(teacher, weak_image);
  RpnOutput rpn = rpn_values(teacher, features);
  const Proposals props = select_top_proposals(rpn, make_anchors(cfg.anchors, h, w), s.n_proposals, s.rpn_nms, h, w);

  SoftPseudoLabel label;
  label.rpn = {softmax_rows(rpn.logits), std::move(rpn.deltas)};
  label.proposals = props.boxes;
  label.objectness = props.objectness;
  switch (s.ensemble) {
    case EnsembleMode::kNone:
      label.roi = single_branch(teacher, features, label.proposals);
      break;
    case EnsembleMode::kFlip:
      label.roi = flip_ensemble(teacher, weak_image, features, label.proposals);
      break;
    case EnsembleMode::kRandomAug:
      label.roi = random_aug_ensemble(teacher, weak_image, features, label.proposals, s.aug_seed, s.fill);
      break;
  }
  return label;
}

HardPseudoGT filter_hard_labels(const std::vector<ScoredBox>& detections, double theta) {
  if (!(theta > 0.0 && theta <= 1.0)) throw std::invalid_argument("hard labels: theta must be in (0, 1]");
  HardPseudoGT out;
  for (const ScoredBox& d : detections) {
    if (d.score >= theta) {
      out.gt.push_back({d.box, d.class_id});
      out.scores.push_back(d.score);
    }
  }
  return out;
}

HardPseudoGT make_hard_label(const ParamSet& teacher, const Tensor& weak_image, double theta, double nms_thresh,
                             const DetectorSettings& s) {
  return filter_hard_labels(detect(weak_image, teacher, 0.0, nms_thresh, s), theta);
}

double mean_max_confidence(const RoiTargets& roi) {
  if (roi.probs.empty() || roi.probs.dim(0) == 0) return 0.0;
  const int n = roi.probs.dim(0), k = roi.probs.dim(1);
  double total = 0;
  for (int r = 0; r < n; ++r) {
    double best = 0;
    for (int j = 0; j + 1 < k; ++j) best = std::max(best, roi.probs.at(r, j));
    total += best;
  }
  return total / n;
}

}  // namespace mtdet
