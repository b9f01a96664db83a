// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "mtdet/data.hpp"
#include "mtdet/eval.hpp"
#include "mtdet_verify/oracles.hpp"

using namespace mtdet;

TEST_SUITE("data-eval") {
  TEST_CASE("scenes satisfy the spec invariants") {
    const SceneSpec spec;
    for (std::uint64_t s = 0; s < 200; ++s) {
      const Scene sc = generate_scene(s, spec);
      CHECK(sc.image.shape() == Shape{3, 64, 64});
      CHECK((sc.gt.size() >= 1 && sc.gt.size() <= 3));
      for (double v : sc.image.values()) {
        CHECK(v == std::round(v));
        CHECK((v >= 0 && v <= 255));
      }
      for (std::size_t i = 0; i < sc.gt.size(); ++i) {
        const Box& b = sc.gt[i].box;
        CHECK((b.x1 >= 0 && b.y1 >= 0 && b.x2 <= 64 && b.y2 <= 64));
        CHECK((sc.gt[i].class_id >= 0 && sc.gt[i].class_id < 3));
        for (std::size_t j = i + 1; j < sc.gt.size(); ++j) CHECK(iou(b, sc.gt[j].box) <= 0.3);
      }
    }
  }

  TEST_CASE("scene generation is a pure function of the seed") {
    const Scene a = generate_scene(42, SceneSpec{}), b = generate_scene(42, SceneSpec{}), c = generate_scene(43, SceneSpec{});
    CHECK(a.image == b.image);
    CHECK(a.gt == b.gt);
    CHECK_FALSE(a.image == c.image);
  }

  TEST_CASE("spec text form distinguishes specs") {
    SceneSpec a, b;
    b.noise = 7.0;
    CHECK(a.canonical() != b.canonical());
    CHECK(a.hash() != b.hash());
    CHECK(kind_from(kind_name(ShapeKind::kTriangle)) == ShapeKind::kTriangle);
    CHECK_THROWS_AS(kind_from("hexagon"), DataError);
  }

  TEST_CASE("split partitions the pool and keeps eval fixed across split seeds") {
    const DatasetSplit a = split_dataset(120, 0.1, 1, 20), b = split_dataset(120, 0.1, 2, 20);
    CHECK(a.labeled.size() == 10);
    CHECK(a.unlabeled.size() == 90);
    CHECK(a.eval.size() == 20);
    CHECK(a.eval == b.eval);
    CHECK(a.labeled != b.labeled);
    std::set<int> all(a.labeled.begin(), a.labeled.end());
    all.insert(a.unlabeled.begin(), a.unlabeled.end());
    all.insert(a.eval.begin(), a.eval.end());
    CHECK(all.size() == 120);
    CHECK_THROWS_AS(split_dataset(120, 0.0, 1, 20), DataError);
    CHECK_THROWS_AS(split_dataset(120, 0.1, 1, 120), DataError);
    CHECK_THROWS_AS(split_dataset(10, 0.01, 1, 2), DataError);
  }

  TEST_CASE("corpus archive round trip and errors") {
    testing::TempDir dir("corpus");
    const Corpus c = generate_corpus(SceneSpec{}, 10, 3);
    save_corpus(c, dir.path());
    const Corpus back = load_corpus(dir.path());
    CHECK(back.size() == 10);
    CHECK(back.seed == 3);
    CHECK(back.spec == c.spec);
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(back.scenes[i].image == c.scenes[i].image);
      CHECK(back.scenes[i].gt == c.scenes[i].gt);
    }
    CHECK_THROWS_AS(load_corpus(dir / "missing"), DataError);
    testing::write_text(dir / "manifest.txt", "something else\n");
    CHECK_THROWS_AS(load_corpus(dir.path()), DataError);
  }

  TEST_CASE("mean pixel over a subset") {
    Corpus c;
    c.scenes.push_back({Tensor({3, 2, 2}, 10.0), {}});
    c.scenes.push_back({Tensor({3, 2, 2}, 30.0), {}});
    CHECK(mean_pixel(c, {0, 1}) == doctest::Approx(20.0));
    CHECK(mean_pixel(c, {1}) == doctest::Approx(30.0));
  }

  TEST_CASE("average precision on hand-built ranked lists") {
    CHECK(average_precision({true, true}, 2) == doctest::Approx(1.0));
    CHECK(average_precision({false, true}, 1) == doctest::Approx(0.5));
    CHECK(average_precision({true, false, true}, 2) == doctest::Approx(0.5 + 0.5 * 2.0 / 3.0));
    CHECK(average_precision({}, 3) == 0.0);
    CHECK_THROWS(average_precision({true}, 0));
  }

  TEST_CASE("coco thresholds") {
    const auto t = coco_iou_thresholds();
    REQUIRE(t.size() == 10);
    CHECK(t.front() == doctest::Approx(0.5));
    CHECK(t.back() == doctest::Approx(0.95));
  }

  TEST_CASE("perfect and empty detections") {
    const std::vector<GroundTruth> gt{{{{0, 0, 10, 10}, 0}, {{20, 20, 30, 30}, 1}}};
    const std::vector<std::vector<ScoredBox>> perfect{{{{0, 0, 10, 10}, 0.9, 0}, {{20, 20, 30, 30}, 0.8, 1}}};
    const MapResult p = evaluate_map(perfect, gt);
    CHECK(p.map == doctest::Approx(1.0));
    CHECK(p.ap50 == doctest::Approx(1.0));
    CHECK(evaluate_map({{}}, gt).map == 0.0);
    // Wrong class scores nothing.
    const std::vector<std::vector<ScoredBox>> wrong{{{{0, 0, 10, 10}, 0.9, 1}}};
    CHECK(evaluate_map(wrong, gt).map == 0.0);
  }

  TEST_CASE("a loose box counts only at low thresholds") {
    const std::vector<GroundTruth> gt{{{{0, 0, 10, 10}, 0}}};
    const std::vector<std::vector<ScoredBox>> det{{{{0, 0, 10, 7.2}, 0.9, 0}}};  // IoU 0.72
    const MapResult r = evaluate_map(det, gt);
    CHECK(r.ap50 == doctest::Approx(1.0));
    CHECK(r.map == doctest::Approx(5.0 / 10.0));  // 0.50..0.70 inclusive
  }

  TEST_CASE("tied scores stay within the range over consistent orderings") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0, 1);
    for (int inst = 0; inst < 100; ++inst) {
      GroundTruth gt;
      for (int k = 0; k < 2; ++k) {
        const double x = u(rng) * 20, y = u(rng) * 20;
        gt.push_back({{x, y, x + 10, y + 10}, 0});
      }
      std::vector<ScoredBox> dets;
      for (int k = 0; k < 5; ++k) {
        const Box& src = gt[k % 2].box;
        const double j = (u(rng) - 0.5) * 6;
        dets.push_back({{src.x1 + j, src.y1, src.x2 + j, src.y2}, std::round(u(rng) * 2) / 2, 0});
      }
      const auto [hi, lo] = oracle::ap_over_orderings(dets, gt, 0, 0.5);
      const double got = evaluate_map({dets}, {gt}, {0.5}).map;
      CHECK(got <= hi + 1e-12);
      CHECK(got >= lo - 1e-12);
    }
  }

  TEST_CASE("evaluator matches the brute-force oracle") {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(0, 1);
    for (int inst = 0; inst < 200; ++inst) {
      std::vector<std::vector<ScoredBox>> dets(2);
      std::vector<GroundTruth> gt(2);
      for (int im = 0; im < 2; ++im) {
        for (int k = 0; k < 3; ++k) {
          const double x = u(rng) * 20, y = u(rng) * 20;
          gt[im].push_back({{x, y, x + 8 + u(rng) * 4, y + 8 + u(rng) * 4}, k % 2});
        }
        for (int k = 0; k < 6; ++k) {
          const Box& s = gt[im][k % 3].box;
          const double j = (u(rng) - 0.5) * 4;
          dets[im].push_back({{s.x1 + j, s.y1 - j, s.x2, s.y2 + j}, u(rng), static_cast<int>(u(rng) * 2)});
        }
      }
      CHECK(evaluate_map(dets, gt).map == doctest::Approx(oracle::map(dets, gt, coco_iou_thresholds())).epsilon(1e-12));
    }
  }

  TEST_CASE("evaluator input errors") {
    CHECK_THROWS(evaluate_map({{}, {}}, {{}}));
    CHECK_THROWS(evaluate_map({{}}, {{}}, {0.9, 0.5}));
  }
}
