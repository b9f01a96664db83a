// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"
#include "mtdet/geometry.hpp"
#include "mtdet_verify/oracles.hpp"

using namespace mtdet;

TEST_SUITE("geometry") {
  TEST_CASE("iou of hand-computed pairs") {
    CHECK(iou({0, 0, 2, 2}, {1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0));
    CHECK(iou({0, 0, 2, 2}, {0, 0, 2, 2}) == 1.0);
    CHECK(iou({0, 0, 1, 1}, {1, 0, 2, 1}) == 0.0);  // shared edge
    CHECK(iou({0, 0, 1, 1}, {5, 5, 6, 6}) == 0.0);
    CHECK(iou({0, 0, 4, 4}, {1, 1, 3, 3}) == doctest::Approx(0.25));  // containment
  }

  TEST_CASE("degenerate boxes have zero iou") {
    CHECK(iou({1, 1, 1, 1}, {1, 1, 1, 1}) == 0.0);
    CHECK_FALSE(Box{2, 0, 1, 1}.valid());
    CHECK(Box{0, 0, 1, 1}.valid());
  }

  TEST_CASE("delta encoding of a shifted box") {
    const Delta4 d = encode_deltas({0, 0, 10, 10}, {5, 0, 15, 10});
    CHECK(d[0] == doctest::Approx(0.5));
    CHECK(d[1] == doctest::Approx(0.0));
    CHECK(d[2] == doctest::Approx(0.0));
    CHECK(d[3] == doctest::Approx(0.0));
    const Delta4 s = encode_deltas({0, 0, 10, 10}, {0, 0, 20, 5});
    CHECK(s[2] == doctest::Approx(std::log(2.0)));
    CHECK(s[3] == doctest::Approx(std::log(0.5)));
  }

  TEST_CASE("decode clamps log-scale and clips to the image") {
    const Box b = decode_deltas({0, 0, 10, 10}, {0, 0, 50, 0});
    CHECK(b.width() == doctest::Approx(10 * std::exp(kMaxLogScale)));
    const Box c = decode_deltas({0, 0, 10, 10}, {0, 0, 1, 1}, 12.0, 12.0);
    CHECK(c.x1 == 0.0);
    CHECK(c.y1 == 0.0);
    CHECK(c.x2 == 12.0);
    CHECK(c.y2 == 12.0);
  }

  TEST_CASE("encode/decode round trip across scales 1..1000") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> size(1, 1000), pos(-200, 200);
    for (int i = 0; i < 1000; ++i) {
      const double ax = pos(rng), ay = pos(rng), tx = pos(rng), ty = pos(rng);
      const Box a{ax, ay, ax + size(rng), ay + size(rng)};
      const Box t{tx, ty, tx + size(rng), ty + size(rng)};
      const Box r = decode_deltas(a, encode_deltas(a, t));
      CHECK(r.x1 == doctest::Approx(t.x1).epsilon(1e-9));
      CHECK(r.y2 == doctest::Approx(t.y2).epsilon(1e-9));
    }
  }

  TEST_CASE("nms keeps the higher score and respects the strict threshold") {
    const std::vector<ScoredBox> boxes{{{0, 0, 10, 10}, 0.9, 0}, {{1, 1, 11, 11}, 0.8, 0}, {{30, 30, 40, 40}, 0.7, 0}};
    CHECK(nms(boxes, 0.5) == std::vector<int>{0, 2});
    // IoU exactly 0.5 is not suppressed.
    const std::vector<ScoredBox> half{{{0, 0, 10, 10}, 0.9, 0}, {{0, 0, 10, 5}, 0.8, 0}};
    CHECK(nms(half, 0.5) == std::vector<int>{0, 1});
    CHECK(nms(half, 0.49) == std::vector<int>{0});
  }

  TEST_CASE("nms breaks ties by lower index and handles empty input") {
    const std::vector<ScoredBox> tie{{{0, 0, 10, 10}, 0.5, 0}, {{0, 0, 10, 10}, 0.5, 0}};
    CHECK(nms(tie, 0.5) == std::vector<int>{0});
    CHECK(nms({}, 0.5).empty());
  }

  TEST_CASE("nms matches the brute-force reference on random sets") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0, 1);
    for (int inst = 0; inst < 200; ++inst) {
      std::vector<ScoredBox> boxes;
      for (int i = 0; i < 30; ++i) {
        const double x = u(rng) * 50, y = u(rng) * 50;
        boxes.push_back({{x, y, x + 5 + u(rng) * 10, y + 5 + u(rng) * 10}, std::round(u(rng) * 5) / 5, 0});
      }
      CHECK(nms(boxes, 0.3) == oracle::nms(boxes, 0.3));
    }
  }

  TEST_CASE("horizontal flip of boxes and deltas") {
    const Box f = hflip_box({1, 2, 3, 4}, 10);
    CHECK(f == Box{7, 2, 9, 4});
    const Delta4 d = hflip_delta({0.3, -0.2, 0.1, 0.4});
    CHECK(d == Delta4{-0.3, -0.2, 0.1, 0.4});
    // A flipped target encoded against a flipped anchor negates dx only.
    const Box a{4, 4, 20, 16}, t{6, 3, 18, 19};
    const Delta4 e = encode_deltas(a, t), m = encode_deltas(hflip_box(a, 64), hflip_box(t, 64));
    CHECK(m[0] == doctest::Approx(-e[0]));
    CHECK(m[1] == doctest::Approx(e[1]));
    CHECK(m[2] == doctest::Approx(e[2]));
  }

  TEST_CASE("clip_box bounds coordinates") {
    CHECK(clip_box({-3, -1, 70, 30}, 64, 32) == Box{0, 0, 64, 30});
  }

  TEST_CASE("anchor grid layout") {
    const AnchorSpec spec;
    const AnchorGrid g = make_anchors(spec, 64, 64);
    CHECK(g.feat_h == 8);
    CHECK(g.feat_w == 8);
    CHECK(g.size() == 8u * 8u * 6u);
    const Box& first = g.anchors[0];
    CHECK(first.cx() == doctest::Approx(4.0));
    CHECK(first.cy() == doctest::Approx(4.0));
    CHECK(std::sqrt(first.area()) == doctest::Approx(12.0));
    CHECK(first.height() / first.width() == doctest::Approx(0.8));
    CHECK_THROWS_AS(make_anchors(spec, 60, 64), std::invalid_argument);
  }
}
