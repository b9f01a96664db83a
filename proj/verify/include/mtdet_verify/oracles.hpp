// SPDX-License-Identifier: Apache-2.0
//
// Reference implementations used only to check the library. They favour the
// most literal formulation over speed and share no code with the code under
// test.
#pragma once

#include <functional>
#include <vector>

#include "mtdet/detector.hpp"
#include "mtdet/geometry.hpp"
#include "mtdet/params.hpp"
#include "mtdet/tensor.hpp"

namespace mtdet::oracle {

double iou(const Box& a, const Box& b);

/// Greedy NMS by repeated arg-max over the surviving set (lowest index wins
/// ties); returns kept indices in selection order.
std::vector<int> nms(const std::vector<ScoredBox>& boxes, double thresh);

/// out[co][oy][ox] = b[co] + sum over (ci, ky, kx) inside the input.
Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& b, int stride, int pad);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor softmax_rows(const Tensor& logits);
double kl(const Tensor& p, const Tensor& q);

/// AP of one class at one threshold. Detections are visited in descending
/// score order; each takes the best unmatched GT of the image when its IoU
/// reaches the threshold. AP is the sum over recall steps of the best
/// precision at that recall or beyond.
double class_ap(const std::vector<std::vector<ScoredBox>>& dets, const std::vector<GroundTruth>& gt, int cls,
                double thresh);

/// mAP over classes present in gt and over thresholds.
double map(const std::vector<std::vector<ScoredBox>>& dets, const std::vector<GroundTruth>& gt,
           const std::vector<double>& thresholds);

/// Largest AP over every ordering of detections consistent with their
/// scores, and the smallest; equal when scores are distinct.
std::pair<double, double> ap_over_orderings(const std::vector<ScoredBox>& dets, const GroundTruth& gt, int cls,
                                            double thresh);

/// alpha^t * w0 + (1 - alpha^t) * ws
double ema_closed_form(double w0, double ws, double alpha, int t);

/// Central differences of f at every coordinate of `at` (or `max_coords`
/// sampled coordinates per tensor when positive). Coordinates not evaluated
/// are NaN.
ParamSet numeric_gradient(const std::function<double(const ParamSet&)>& f, const ParamSet& at, double eps,
                          int max_coords = 0, std::uint64_t seed = 0);

/// max over evaluated coordinates of |a - n| / max(|a|, |n|, floor).
double max_rel_error(const ParamSet& analytic, const ParamSet& numeric, double floor = 1e-7);

}  // namespace mtdet::oracle
