// SPDX-License-Identifier: Apache-2.0
//
// Micro two-stage detector: three stride-2 conv blocks, an RPN over a single
// anchor grid, max-pooled ROI features and a two-layer ROI head with
// class-dependent box regression.
//
// Layouts:
//   image       {3, H, W}, pixel values in [0, 255]
//   features    {channels, H/8, W/8}
//   RPN logits  {anchors, 2}  column 0 background, column 1 foreground
//   RPN deltas  {anchors, 4}
//   ROI logits  {proposals, C+1}  column c is class c, column C is background
//   ROI deltas  {proposals, 4*C}  columns 4c..4c+3 belong to class c
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mtdet/autodiff.hpp"
#include "mtdet/geometry.hpp"
#include "mtdet/params.hpp"

namespace mtdet {

struct DetectorConfig {
  int num_classes = 3;
  AnchorSpec anchors;
  std::vector<int> channels{16, 32, 32};  // one stride-2 3x3 conv per entry
  int rpn_channels = 32;
  int pool_size = 4;
  int hidden = 64;

  int total_stride() const { return 1 << channels.size(); }
  friend bool operator==(const DetectorConfig&, const DetectorConfig&) = default;
};

/// Sampling and matching knobs for the supervised loss and inference.
struct DetectorSettings {
  double rpn_pos_iou = 0.7;
  double rpn_neg_iou = 0.3;
  int rpn_batch = 32;
  double rpn_pos_fraction = 0.5;
  double roi_fg_iou = 0.5;
  int roi_batch = 64;
  double roi_fg_fraction = 0.25;
  int train_proposals = 64;  // student proposals fed to supervised ROI sampling
  int test_proposals = 100;
  double rpn_nms = 0.7;
  int max_detections = 100;
};

struct GtObject {
  Box box;
  int class_id = 0;
  friend bool operator==(const GtObject&, const GtObject&) = default;
};
using GroundTruth = std::vector<GtObject>;

/// Fresh parameters: He-uniform weights, zero biases. The config is recorded in
/// the ParamSet metadata so checkpoints are self-describing.
ParamSet init_detector(const DetectorConfig& cfg, std::uint64_t seed);
DetectorConfig detector_config_of(const ParamSet& params);
void write_detector_meta(const DetectorConfig& cfg, ParamSet& params);

// ---- graph-level forward pieces (shared by teacher and student paths) ----

struct RpnVars {
  Var logits;
  Var deltas;
};

struct RoiVars {
  Var logits;
  Var deltas;
};

/// Pixels are mapped to [-1, 1] before the first conv. Throws
/// std::invalid_argument when a side is not divisible by the total stride.
Var backbone_forward(Graph& g, const BoundParams& p, const DetectorConfig& cfg, const Tensor& image);
RpnVars rpn_forward(Graph& g, const BoundParams& p, const DetectorConfig& cfg, Var features);
/// pooled {P, channels*pool*pool} -> class logits and all-class deltas.
RoiVars roi_head_forward(Graph& g, const BoundParams& p, Var pooled);
RoiVars roi_forward(Graph& g, const BoundParams& p, const DetectorConfig& cfg, Var features,
                    const std::vector<Box>& proposals);

// ---- detached values ----

struct RpnOutput {
  Tensor logits;  // {A, 2}
  Tensor deltas;  // {A, 4}
  std::size_t size() const { return logits.empty() ? 0 : static_cast<std::size_t>(logits.dim(0)); }
};

struct RoiOutput {
  Tensor logits;  // {P, C+1}
  Tensor deltas;  // {P, 4C}
  std::size_t size() const { return logits.empty() ? 0 : static_cast<std::size_t>(logits.dim(0)); }
};

Tensor backbone_values(const ParamSet& params, const Tensor& image);
RpnOutput rpn_values(const ParamSet& params, const Tensor& features);
RoiOutput roi_values(const ParamSet& params, const Tensor& features, const std::vector<Box>& proposals);

struct Proposals {
  std::vector<Box> boxes;
  std::vector<double> objectness;
  std::size_t size() const { return boxes.size(); }
};

/// Decode every anchor, clip to the image, drop degenerate boxes, apply RPN NMS
/// and keep the top `n` by objectness.
Proposals select_top_proposals(const RpnOutput& rpn, const AnchorGrid& anchors, int n, double nms_thresh,
                               int image_h, int image_w);

/// Per-anchor training labels: 1 foreground, 0 background, -1 ignored. An
/// anchor is foreground when its best IoU reaches `pos_iou` or when it is the
/// best anchor of some ground-truth box.
struct AnchorMatch {
  std::vector<int> labels;
  std::vector<int> matched_gt;  // -1 when none
};
AnchorMatch match_anchors(const AnchorGrid& anchors, const GroundTruth& gt, double pos_iou, double neg_iou);

/// Everything random or discrete the supervised loss depends on, fixed ahead of
/// the differentiable part.
struct SupervisedPlan {
  std::vector<int> rpn_rows;      // sampled anchors
  std::vector<int> rpn_labels;    // 0/1 per sampled anchor
  std::vector<int> rpn_pos_rows;  // positive anchors (subset of rpn_rows)
  Tensor rpn_targets;             // {pos, 4}
  std::vector<Box> rois;
  std::vector<int> roi_labels;  // class id, or C for background
  std::vector<int> roi_fg;      // indices into rois
  std::vector<int> roi_fg_class;
  Tensor roi_targets;  // {fg, 4}
};

SupervisedPlan plan_supervised(const DetectorConfig& cfg, const DetectorSettings& s, const RpnOutput& rpn,
                               const AnchorGrid& anchors, const GroundTruth& gt, int image_h, int image_w,
                               std::uint64_t seed);

struct LossTerms {
  Var total;
  Var rpn_cls;
  Var rpn_loc;
  Var roi_cls;
  Var roi_loc;
};

struct LossBreakdown {
  double total = 0, rpn_cls = 0, rpn_loc = 0, roi_cls = 0, roi_loc = 0;
};
LossBreakdown breakdown(const Graph& g, const LossTerms& t);

/// L_S = rpn_cls + rpn_loc + roi_cls + roi_loc with a fixed plan. Classification
/// terms are cross-entropies and localisation terms smooth-L1 on positives,
/// each normalised by its sample count.
LossTerms supervised_loss_with_plan(Graph& g, const BoundParams& p, const DetectorConfig& cfg, Var features,
                                    const RpnVars& rpn, const SupervisedPlan& plan);

/// Full supervised loss for one image; the plan is drawn from `seed`.
LossTerms supervised_loss(Graph& g, const BoundParams& p, const DetectorConfig& cfg, const DetectorSettings& s,
                          const Tensor& image, const GroundTruth& gt, std::uint64_t seed,
                          SupervisedPlan* plan_out = nullptr);

/// Class-wise decode, score filter (score > score_thresh), per-class NMS and
/// top-k on already computed ROI outputs.
std::vector<ScoredBox> detections_from_roi(const std::vector<Box>& proposals, const RoiOutput& roi, int num_classes,
                                           int image_h, int image_w, double score_thresh, double nms_thresh,
                                           int max_detections);

/// Inference on an unaugmented image.
std::vector<ScoredBox> detect(const Tensor& image, const ParamSet& params, double score_thresh, double nms_thresh,
                              const DetectorSettings& s = {});

}  // namespace mtdet
