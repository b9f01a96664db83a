// SPDX-License-Identifier: Apache-2.0
#include <random>

#include "doctest.h"
#include "mtdet/augment.hpp"
#include "mtdet/data.hpp"
#include "mtdet/pseudo_label.hpp"

using namespace mtdet;

namespace {

struct Fixture {
  DetectorConfig cfg;
  ParamSet teacher = init_detector(cfg, 21);
  Scene scene = generate_scene(22, SceneSpec{});
  std::vector<Box> props{{4, 4, 30, 28}, {20, 10, 60, 40}, {0, 30, 24, 64}};
};

}  // namespace

TEST_SUITE("pseudo-label") {
  TEST_CASE("rpn targets are per-anchor distributions") {
    Fixture f;
    const RpnTargets t = teacher_rpn_targets(f.teacher, f.scene.image);
    REQUIRE(t.objectness.shape() == Shape{384, 2});
    for (int r = 0; r < 384; ++r) CHECK(t.objectness.at(r, 0) + t.objectness.at(r, 1) == doctest::Approx(1.0));
  }

  TEST_CASE("flip ensemble averages the image branch and the mirrored branch") {
    Fixture f;
    const RoiTargets a = teacher_roi_targets(f.teacher, f.scene.image, f.props);
    std::vector<Box> mirrored;
    for (const Box& b : f.props) mirrored.push_back(hflip_box(b, 64));
    const RoiTargets b = teacher_roi_targets(f.teacher, hflip_image(f.scene.image), mirrored);
    const RoiTargets e = teacher_ensemble_roi(f.teacher, f.scene.image, f.props);
    for (std::size_t i = 0; i < e.probs.size(); ++i) CHECK(e.probs[i] == doctest::Approx(0.5 * (a.probs[i] + b.probs[i])));
    for (std::size_t i = 0; i < e.deltas.size(); ++i) {
      const double mirrored_d = i % 4 == 0 ? -b.deltas[i] : b.deltas[i];
      CHECK(e.deltas[i] == doctest::Approx(0.5 * (a.deltas[i] + mirrored_d)));
    }
  }

  TEST_CASE("random-aug ensemble averages with the augmented view") {
    Fixture f;
    const RoiTargets a = teacher_roi_targets(f.teacher, f.scene.image, f.props);
    const Tensor aug = apply_strong(f.scene.image, plan_strong(5, 64, 90.0));
    const RoiTargets b = teacher_roi_targets(f.teacher, aug, f.props);
    const RoiTargets e = random_aug_ensemble_roi(f.teacher, f.scene.image, f.props, 5, 90.0);
    for (std::size_t i = 0; i < e.deltas.size(); ++i) CHECK(e.deltas[i] == doctest::Approx(0.5 * (a.deltas[i] + b.deltas[i])));
  }

  TEST_CASE("soft label carries N proposals and matching ROI targets") {
    Fixture f;
    for (int n : {1, 16, 640}) {
      PseudoLabelSettings s;
      s.n_proposals = n;
      s.ensemble = EnsembleMode::kNone;
      const SoftPseudoLabel l = make_soft_label(f.teacher, f.scene.image, s);
      CHECK(static_cast<int>(l.proposals.size()) <= n);
      CHECK(l.proposals.size() == l.objectness.size());
      CHECK(l.roi.probs.dim(0) == static_cast<int>(l.proposals.size()));
      const RoiTargets direct = teacher_roi_targets(f.teacher, f.scene.image, l.proposals);
      CHECK(direct.probs == l.roi.probs);
    }
    PseudoLabelSettings bad;
    bad.n_proposals = 0;
    CHECK_THROWS(make_soft_label(f.teacher, f.scene.image, bad));
  }

  TEST_CASE("hard filter keeps scores at or above theta") {
    const std::vector<ScoredBox> d{{{0, 0, 5, 5}, 0.9, 0}, {{1, 1, 6, 6}, 0.69, 1}, {{2, 2, 7, 7}, 0.71, 2}};
    const HardPseudoGT h = filter_hard_labels(d, 0.7);
    REQUIRE(h.gt.size() == 2);
    CHECK(h.gt[0].class_id == 0);
    CHECK(h.gt[1].class_id == 2);
    CHECK(h.scores == std::vector<double>{0.9, 0.71});
    CHECK(filter_hard_labels(d, 1.0).gt.empty());
    CHECK(filter_hard_labels(d, 0.69).gt.size() == 3);
    CHECK_THROWS(filter_hard_labels(d, 0.0));
  }

  TEST_CASE("mean max confidence ignores the background column") {
    RoiTargets r;
    r.probs = Tensor({2, 3}, std::vector<double>{0.7, 0.1, 0.2, 0.1, 0.1, 0.8});
    CHECK(mean_max_confidence(r) == doctest::Approx(0.4));
    CHECK(mean_max_confidence(RoiTargets{}) == 0.0);
  }

  TEST_CASE("hard labels equal filtered teacher detections") {
    Fixture f;
    const HardPseudoGT h = make_hard_label(f.teacher, f.scene.image, 0.3, 0.5);
    const HardPseudoGT ref = filter_hard_labels(detect(f.scene.image, f.teacher, 0.0, 0.5), 0.3);
    CHECK(h.gt == ref.gt);
  }
}
