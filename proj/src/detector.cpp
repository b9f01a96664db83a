// SPDX-License-Identifier: Apache-2.0
#include "mtdet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mtdet {

namespace {

std::string join(const std::vector<double>& v) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::string join(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

template <typename T>
std::vector<T> split(const std::string& s) {
  std::vector<T> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    if constexpr (std::is_same_v<T, int>) {
      out.push_back(std::stoi(item));
    } else {
      out.push_back(std::stod(item));
    }
  }
  return out;
}

const std::string& meta_at(const ParamSet& p, const std::string& key) {
  auto it = p.meta().find(key);
  if (it == p.meta().end()) throw std::runtime_error("checkpoint lacks detector metadata '" + key + "'");
  return it->second;
}

Tensor normalise_pixels(const Tensor& image) {
  Tensor x = image;
  for (double& v : x.values()) v = v / 127.5 - 1.0;
  return x;
}

}  // namespace

void write_detector_meta(const DetectorConfig& cfg, ParamSet& params) {
  auto& m = params.meta();
  m["detector.num_classes"] = std::to_string(cfg.num_classes);
  m["detector.anchor_stride"] = std::to_string(cfg.anchors.stride);
  m["detector.anchor_scales"] = join(cfg.anchors.scales);
  m["detector.anchor_aspects"] = join(cfg.anchors.aspects);
  m["detector.channels"] = join(cfg.channels);
  m["detector.rpn_channels"] = std::to_string(cfg.rpn_channels);
  m["detector.pool_size"] = std::to_string(cfg.pool_size);
  m["detector.hidden"] = std::to_string(cfg.hidden);
}

DetectorConfig detector_config_of(const ParamSet& params) {
  DetectorConfig cfg;
  cfg.num_classes = std::stoi(meta_at(params, "detector.num_classes"));
  cfg.anchors.stride = std::stoi(meta_at(params, "detector.anchor_stride"));
  cfg.anchors.scales = split<double>(meta_at(params, "detector.anchor_scales"));
  cfg.anchors.aspects = split<double>(meta_at(params, "detector.anchor_aspects"));
  cfg.channels = split<int>(meta_at(params, "detector.channels"));
  cfg.rpn_channels = std::stoi(meta_at(params, "detector.rpn_channels"));
  cfg.pool_size = std::stoi(meta_at(params, "detector.pool_size"));
  cfg.hidden = std::stoi(meta_at(params, "detector.hidden"));
  return cfg;
}

ParamSet init_detector(const DetectorConfig& cfg, std::uint64_t seed) {
  if (cfg.anchors.stride != cfg.total_stride()) {
    throw std::invalid_argument("detector: anchor stride " + std::to_string(cfg.anchors.stride) +
                                " does not match backbone stride " + std::to_string(cfg.total_stride()));
  }
  std::mt19937_64 rng(seed);
  ParamSet p;
  auto conv = [&](const std::string& name, int out, int in, int k) {
    p.add(name + ".weight", he_uniform({out, in, k, k}, in * k * k, rng));
    p.add(name + ".bias", Tensor({out}, 0.0));
  };
  auto fc = [&](const std::string& name, int out, int in) {
    p.add(name + ".weight", he_uniform({out, in}, in, rng));
    p.add(name + ".bias", Tensor({out}, 0.0));
  };
  int in = 3;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    conv("backbone.conv" + std::to_string(i + 1), cfg.channels[i], in, 3);
    in = cfg.channels[i];
  }
  const int a = cfg.anchors.per_cell();
  conv("rpn.conv", cfg.rpn_channels, in, 3);
  conv("rpn.cls", 2 * a, cfg.rpn_channels, 1);
  conv("rpn.reg", 4 * a, cfg.rpn_channels, 1);
  fc("roi.fc1", cfg.hidden, in * cfg.pool_size * cfg.pool_size);
  fc("roi.cls", cfg.num_classes + 1, cfg.hidden);
  fc("roi.reg", 4 * cfg.num_classes, cfg.hidden);
  write_detector_meta(cfg, p);
  return p;
}

Var backbone_forward(Graph& g, const BoundParams& p, const DetectorConfig& cfg, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw std::invalid_argument("backbone: expected {3, H, W} image, got " + shape_str(image.shape()));
  }
  const int stride = cfg.total_stride();
  if (image.dim(1) % stride != 0 || image.dim(2) % stride != 0) {
    throw std::invalid_argument("backbone: image " + shape_str(image.shape()) + " not divisible by stride " +
                                std::to_string(stride));
  }
  Var x = g.constant(normalise_pixels(image));
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    const std::string n = "backbone.conv" + std::to_string(i + 1);
    x = relu(g, conv2d(g, x, p[n + ".weight"], p[n + ".bias"], 2, 1));
  }
  return x;
}

RpnVars rpn_forward(Graph& g, const BoundParams& p, const DetectorConfig&, Var features) {
  Var h = relu(g, conv2d(g, features, p["rpn.conv.weight"], p["rpn.conv.bias"], 1, 1));
  Var cls = conv2d(g, h, p["rpn.cls.weight"], p["rpn.cls.bias"], 1, 0);
  Var reg = conv2d(g, h, p["rpn.reg.weight"], p["rpn.reg.bias"], 1, 0);
  return {planes_to_rows(g, cls, 2), planes_to_rows(g, reg, 4)};
}

RoiVars roi_head_forward(Graph& g, const BoundParams& p, Var pooled) {
  Var h = relu(g, linear(g, pooled, p["roi.fc1.weight"], p["roi.fc1.bias"]));
  return {linear(g, h, p["roi.cls.weight"], p["roi.cls.bias"]), linear(g, h, p["roi.reg.weight"], p["roi.reg.bias"])};
}

RoiVars roi_forward(Graph& g, const BoundParams& p, const DetectorConfig& cfg, Var features,
                    const std::vector<Box>& proposals) {
  return roi_head_forward(g, p, roi_pool(g, features, proposals, cfg.total_stride(), cfg.pool_size));
}

Tensor backbone_values(const ParamSet& params, const Tensor& image) {
  Graph g;
  BoundParams p(g, params, false);
  return g.value(backbone_forward(g, p, detector_config_of(params), image));
}

RpnOutput rpn_values(const ParamSet& params, const Tensor& features) {
  Graph g;
  BoundParams p(g, params, false);
  RpnVars r = rpn_forward(g, p, detector_config_of(params), g.constant(features));
  return {g.value(r.logits), g.value(r.deltas)};
}

RoiOutput roi_values(const ParamSet& params, const Tensor& features, const std::vector<Box>& proposals) {
  Graph g;
  BoundParams p(g, params, false);
  RoiVars r = roi_forward(g, p, detector_config_of(params), g.constant(features), proposals);
  return {g.value(r.logits), g.value(r.deltas)};
}

Proposals select_top_proposals(const RpnOutput& rpn, const AnchorGrid& anchors, int n, double nms_thresh,
                               int image_h, int image_w) {
  if (n < 1) throw std::invalid_argument("select_top_proposals: n must be >= 1");
  Proposals out;
  if (rpn.size() == 0) return out;
  if (rpn.size() != anchors.size()) {
    throw ShapeError("select_top_proposals: " + std::to_string(rpn.size()) + " RPN rows vs " +
                     std::to_string(anchors.size()) + " anchors");
  }
  const Tensor prob = softmax_rows(rpn.logits);
  std::vector<ScoredBox> cand;
  cand.reserve(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const int r = static_cast<int>(i);
    const Delta4 d{rpn.deltas.at(r, 0), rpn.deltas.at(r, 1), rpn.deltas.at(r, 2), rpn.deltas.at(r, 3)};
    const Box b = decode_deltas(anchors.anchors[i], d, image_w, image_h);
    if (b.width() < 1.0 || b.height() < 1.0) continue;
    cand.push_back({b, prob.at(r, 1), 0});
  }
  for (int idx : nms(cand, nms_thresh)) {
    if (static_cast<int>(out.boxes.size()) >= n) break;
    out.boxes.push_back(cand[idx].box);
    out.objectness.push_back(cand[idx].score);
  }
  return out;
}

AnchorMatch match_anchors(const AnchorGrid& anchors, const GroundTruth& gt, double pos_iou, double neg_iou) {
  const std::size_t na = anchors.size();
  AnchorMatch m{std::vector<int>(na, 0), std::vector<int>(na, -1)};
  if (gt.empty()) return m;
  std::vector<double> best(na, 0.0);
  std::vector<double> gt_best(gt.size(), 0.0);
  std::vector<double> ious(na * gt.size());
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const double v = iou(anchors.anchors[a], gt[j].box);
      ious[a * gt.size() + j] = v;
      if (v > best[a]) {
        best[a] = v;
        m.matched_gt[a] = static_cast<int>(j);
      }
      gt_best[j] = std::max(gt_best[j], v);
    }
  }
  for (std::size_t a = 0; a < na; ++a) {
    if (best[a] >= pos_iou) {
      m.labels[a] = 1;
    } else if (best[a] < neg_iou) {
      m.labels[a] = 0;
    } else {
      m.labels[a] = -1;
    }
  }
  for (std::size_t j = 0; j < gt.size(); ++j) {
    if (gt_best[j] <= 0) continue;
    for (std::size_t a = 0; a < na; ++a) {
      if (ious[a * gt.size() + j] == gt_best[j]) m.labels[a] = 1;
    }
  }
  return m;
}

SupervisedPlan plan_supervised(const DetectorConfig& cfg, const DetectorSettings& s, const RpnOutput& rpn,
                               const AnchorGrid& anchors, const GroundTruth& gt, int image_h, int image_w,
                               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SupervisedPlan plan;

  // RPN: fixed-size positive/negative anchor sample.
  const AnchorMatch m = match_anchors(anchors, gt, s.rpn_pos_iou, s.rpn_neg_iou);
  std::vector<int> pos, neg;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    if (m.labels[a] == 1) pos.push_back(static_cast<int>(a));
    if (m.labels[a] == 0) neg.push_back(static_cast<int>(a));
  }
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  const int max_pos = static_cast<int>(s.rpn_batch * s.rpn_pos_fraction);
  pos.resize(std::min<std::size_t>(pos.size(), max_pos));
  neg.resize(std::min<std::size_t>(neg.size(), s.rpn_batch - pos.size()));
  plan.rpn_targets = Tensor({static_cast<int>(pos.size()), 4});
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const Delta4 d = encode_deltas(anchors.anchors[pos[i]], gt[m.matched_gt[pos[i]]].box);
    for (int k = 0; k < 4; ++k) plan.rpn_targets.at(static_cast<int>(i), k) = d[k];
    plan.rpn_rows.push_back(pos[i]);
    plan.rpn_labels.push_back(1);
    plan.rpn_pos_rows.push_back(pos[i]);
  }
  for (int a : neg) {
    plan.rpn_rows.push_back(a);
    plan.rpn_labels.push_back(0);
  }

  // ROI: the model's own proposals plus the ground truth, sampled fg/bg.
  std::vector<Box> cand = select_top_proposals(rpn, anchors, s.train_proposals, s.rpn_nms, image_h, image_w).boxes;
  for (const GtObject& o : gt) cand.push_back(o.box);
  std::vector<int> fg, bg;
  std::vector<int> match(cand.size(), -1);
  for (std::size_t i = 0; i < cand.size(); ++i) {
    double best = 0;
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const double v = iou(cand[i], gt[j].box);
      if (v > best) {
        best = v;
        match[i] = static_cast<int>(j);
      }
    }
    (best >= s.roi_fg_iou ? fg : bg).push_back(static_cast<int>(i));
  }
  std::shuffle(fg.begin(), fg.end(), rng);
  std::shuffle(bg.begin(), bg.end(), rng);
  const int max_fg = static_cast<int>(s.roi_batch * s.roi_fg_fraction);
  fg.resize(std::min<std::size_t>(fg.size(), max_fg));
  bg.resize(std::min<std::size_t>(bg.size(), s.roi_batch - fg.size()));
  plan.roi_targets = Tensor({static_cast<int>(fg.size()), 4});
  for (std::size_t i = 0; i < fg.size(); ++i) {
    const GtObject& o = gt[match[fg[i]]];
    const Delta4 d = encode_deltas(cand[fg[i]], o.box);
    for (int k = 0; k < 4; ++k) plan.roi_targets.at(static_cast<int>(i), k) = d[k];
    plan.roi_fg.push_back(static_cast<int>(plan.rois.size()));
    plan.roi_fg_class.push_back(o.class_id);
    plan.rois.push_back(cand[fg[i]]);
    plan.roi_labels.push_back(o.class_id);
  }
  for (int i : bg) {
    plan.rois.push_back(cand[i]);
    plan.roi_labels.push_back(cfg.num_classes);
  }
  return plan;
}

LossBreakdown breakdown(const Graph& g, const LossTerms& t) {
  return {g.value(t.total)[0], g.value(t.rpn_cls)[0], g.value(t.rpn_loc)[0], g.value(t.roi_cls)[0],
          g.value(t.roi_loc)[0]};
}

LossTerms supervised_loss_with_plan(Graph& g, const BoundParams& p, const DetectorConfig& cfg, Var features,
                                    const RpnVars& rpn, const SupervisedPlan& plan) {
  LossTerms t;
  const double n_rpn = std::max<std::size_t>(plan.rpn_rows.size(), 1);
  if (plan.rpn_rows.empty()) {
    t.rpn_cls = g.constant(Tensor::scalar(0.0));
  } else {
    t.rpn_cls = scale(g, cross_entropy_rows(g, select_rows(g, rpn.logits, plan.rpn_rows), plan.rpn_labels), 1.0 / n_rpn);
  }
  if (plan.rpn_pos_rows.empty()) {
    t.rpn_loc = g.constant(Tensor::scalar(0.0));
  } else {
    t.rpn_loc = scale(g, smooth_l1(g, select_rows(g, rpn.deltas, plan.rpn_pos_rows), plan.rpn_targets), 1.0 / n_rpn);
  }

  if (plan.rois.empty()) {
    t.roi_cls = g.constant(Tensor::scalar(0.0));
    t.roi_loc = g.constant(Tensor::scalar(0.0));
  } else {
    const double n_roi = static_cast<double>(plan.rois.size());
    RoiVars roi = roi_forward(g, p, cfg, features, plan.rois);
    t.roi_cls = scale(g, cross_entropy_rows(g, roi.logits, plan.roi_labels), 1.0 / n_roi);
    if (plan.roi_fg.empty()) {
      t.roi_loc = g.constant(Tensor::scalar(0.0));
    } else {
      Var fg = gather_class_deltas(g, select_rows(g, roi.deltas, plan.roi_fg), plan.roi_fg_class);
      t.roi_loc = scale(g, smooth_l1(g, fg, plan.roi_targets), 1.0 / n_roi);
    }
  }
  t.total = add(g, add(g, t.rpn_cls, t.rpn_loc), add(g, t.roi_cls, t.roi_loc));
  return t;
}

LossTerms supervised_loss(Graph& g, const BoundParams& p, const DetectorConfig& cfg, const DetectorSettings& s,
                          const Tensor& image, const GroundTruth& gt, std::uint64_t seed, SupervisedPlan* plan_out) {
  const int h = image.dim(1), w = image.dim(2);
  Var features = backbone_forward(g, p, cfg, image);
  RpnVars rpn = rpn_forward(g, p, cfg, features);
  const AnchorGrid anchors = make_anchors(cfg.anchors, h, w);
  SupervisedPlan plan =
      plan_supervised(cfg, s, RpnOutput{g.value(rpn.logits), g.value(rpn.deltas)}, anchors, gt, h, w, seed);
  LossTerms t = supervised_loss_with_plan(g, p, cfg, features, rpn, plan);
  if (plan_out) *plan_out = std::move(plan);
  return t;
}

std::vector<ScoredBox> detections_from_roi(const std::vector<Box>& proposals, const RoiOutput& roi, int num_classes,
                                           int image_h, int image_w, double score_thresh, double nms_thresh,
                                           int max_detections) {
  std::vector<ScoredBox> out;
  if (proposals.empty()) return out;
  if (roi.size() != proposals.size()) throw ShapeError("detections_from_roi: ROI rows do not match proposals");
  const Tensor prob = softmax_rows(roi.logits);
  for (int c = 0; c < num_classes; ++c) {
    std::vector<ScoredBox> cls;
    for (std::size_t i = 0; i < proposals.size(); ++i) {
      const int r = static_cast<int>(i);
      const double score = prob.at(r, c);
      if (!(score > score_thresh)) continue;
      const Delta4 d{roi.deltas.at(r, 4 * c), roi.deltas.at(r, 4 * c + 1), roi.deltas.at(r, 4 * c + 2),
                     roi.deltas.at(r, 4 * c + 3)};
      const Box b = decode_deltas(proposals[i], d, image_w, image_h);
      if (!b.valid()) continue;
      cls.push_back({b, score, c});
    }
    for (int idx : nms(cls, nms_thresh)) out.push_back(cls[idx]);
  }
  std::stable_sort(out.begin(), out.end(), [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
  if (static_cast<int>(out.size()) > max_detections) out.resize(max_detections);
  return out;
}

std::vector<ScoredBox> detect(const Tensor& image, const ParamSet& params, double score_thresh, double nms_thresh,
                              const DetectorSettings& s) {
  const DetectorConfig cfg = detector_config_of(params);
  const int h = image.dim(1), w = image.dim(2);
  const Tensor features = backbone_values(params, image);
  const RpnOutput rpn = rpn_values(params, features);
  const Proposals props =
      select_top_proposals(rpn, make_anchors(cfg.anchors, h, w), s.test_proposals, s.rpn_nms, h, w);
  const RoiOutput roi = roi_values(params, features, props.boxes);
  return detections_from_roi(props.boxes, roi, cfg.num_classes, h, w, score_thresh, nms_thresh, s.max_detections);
}

}  // namespace mtdet
