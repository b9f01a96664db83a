// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"
#include "mtdet/data.hpp"
#include "mtdet/detector.hpp"

using namespace mtdet;

namespace {

Scene scene(std::uint64_t seed) { return generate_scene(seed, SceneSpec{}); }

}  // namespace

TEST_SUITE("detector") {
  TEST_CASE("initialisation is seeded and carries its config") {
    const DetectorConfig cfg;
    const ParamSet a = init_detector(cfg, 1), b = init_detector(cfg, 1), c = init_detector(cfg, 2);
    CHECK(a == b);
    CHECK_FALSE(a == c);
    CHECK(detector_config_of(a) == cfg);
    for (const std::string& n : a.names())
      if (n.ends_with(".bias")) CHECK(a.get(n) == Tensor(a.get(n).shape(), 0.0));
  }

  TEST_CASE("head output shapes") {
    const DetectorConfig cfg;
    const ParamSet p = init_detector(cfg, 3);
    const Scene s = scene(4);
    const Tensor f = backbone_values(p, s.image);
    CHECK(f.shape() == Shape{32, 8, 8});
    const RpnOutput rpn = rpn_values(p, f);
    CHECK(rpn.logits.shape() == Shape{384, 2});
    CHECK(rpn.deltas.shape() == Shape{384, 4});
    const RoiOutput roi = roi_values(p, f, {{0, 0, 20, 20}, {10, 10, 40, 50}});
    CHECK(roi.logits.shape() == Shape{2, 4});
    CHECK(roi.deltas.shape() == Shape{2, 12});
    CHECK_THROWS(backbone_values(p, Tensor({3, 60, 64})));
  }

  TEST_CASE("anchor matching labels") {
    AnchorGrid grid;
    grid.anchors = {{0, 0, 10, 10}, {0, 0, 10, 6}, {40, 40, 50, 50}, {2, 0, 12, 10}};
    const GroundTruth gt{{{0, 0, 10, 10}, 1}};
    const AnchorMatch m = match_anchors(grid, gt, 0.7, 0.3);
    CHECK(m.labels[0] == 1);
    CHECK(m.matched_gt[0] == 0);
    CHECK(m.labels[1] == -1);  // IoU 0.6: ignored
    CHECK(m.labels[2] == 0);
    CHECK(m.labels[3] == -1);  // IoU 80/120, just under the positive threshold
    const AnchorMatch none = match_anchors(grid, {}, 0.7, 0.3);
    CHECK(none.labels == std::vector<int>(4, 0));
  }

  TEST_CASE("a GT box with no anchor above the positive threshold still gets its best anchor") {
    AnchorGrid grid;
    grid.anchors = {{0, 0, 10, 10}, {20, 20, 30, 30}};
    const AnchorMatch m = match_anchors(grid, {{{0, 0, 10, 20}, 0}}, 0.7, 0.3);
    CHECK(m.labels[0] == 1);
  }

  TEST_CASE("proposals are sorted, bounded and inside the image") {
    const DetectorConfig cfg;
    const ParamSet p = init_detector(cfg, 5);
    const Scene s = scene(6);
    const RpnOutput rpn = rpn_values(p, backbone_values(p, s.image));
    const Proposals pr = select_top_proposals(rpn, make_anchors(cfg.anchors, 64, 64), 50, 0.7, 64, 64);
    CHECK(pr.size() <= 50);
    CHECK(pr.size() > 0);
    for (std::size_t i = 0; i < pr.size(); ++i) {
      CHECK(pr.boxes[i].x1 >= 0);
      CHECK(pr.boxes[i].y2 <= 64);
      if (i) CHECK(pr.objectness[i - 1] >= pr.objectness[i]);
    }
  }

  TEST_CASE("supervised plan is seed-deterministic and loss is finite") {
    const DetectorConfig cfg;
    const DetectorSettings settings;
    const ParamSet p = init_detector(cfg, 7);
    const Scene s = scene(8);
    Graph g1, g2;
    BoundParams b1(g1, p, true), b2(g2, p, true);
    SupervisedPlan pa, pb;
    const LossTerms la = supervised_loss(g1, b1, cfg, settings, s.image, s.gt, 11, &pa);
    const LossTerms lb = supervised_loss(g2, b2, cfg, settings, s.image, s.gt, 11, &pb);
    CHECK(g1.value(la.total)[0] == g2.value(lb.total)[0]);
    CHECK(pa.rpn_rows == pb.rpn_rows);
    CHECK(static_cast<int>(pa.rpn_rows.size()) <= settings.rpn_batch);
    CHECK(static_cast<int>(pa.rois.size()) <= settings.roi_batch);
    const LossBreakdown br = breakdown(g1, la);
    CHECK(std::isfinite(br.total));
    CHECK(br.total == doctest::Approx(br.rpn_cls + br.rpn_loc + br.roi_cls + br.roi_loc));
    CHECK(br.rpn_cls > 0);
  }

  TEST_CASE("decoding a confident ROI head yields its proposal box") {
    RoiOutput roi;
    roi.logits = Tensor({2, 4}, std::vector<double>{0, 20, 0, 0, 0, 0, 0, 20});
    roi.deltas = Tensor({2, 12}, 0.0);
    const std::vector<Box> props{{10, 10, 30, 30}, {40, 40, 60, 60}};
    const auto dets = detections_from_roi(props, roi, 3, 64, 64, 0.5, 0.5, 100);
    REQUIRE(dets.size() == 1);  // the second proposal is background
    CHECK(dets[0].class_id == 1);
    CHECK(dets[0].box == props[0]);
    CHECK(dets[0].score == doctest::Approx(1.0));
    roi.deltas.at(0, 4) = 0.1;  // class 1 dx
    CHECK(detections_from_roi(props, roi, 3, 64, 64, 0.5, 0.5, 100)[0].box.x1 == doctest::Approx(12.0));
  }

  TEST_CASE("detections respect threshold, image bounds and cap") {
    const DetectorConfig cfg;
    const ParamSet p = init_detector(cfg, 9);
    const Scene s = scene(10);
    DetectorSettings settings;
    settings.max_detections = 5;
    const auto dets = detect(s.image, p, 0.0, 0.5, settings);
    CHECK(dets.size() <= 5);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      CHECK(dets[i].box.x2 <= 64);
      if (i) CHECK(dets[i - 1].score >= dets[i].score);
    }
    CHECK(detect(s.image, p, 1.0, 0.5).empty());
  }
}
