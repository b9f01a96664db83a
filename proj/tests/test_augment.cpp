// SPDX-License-Identifier: Apache-2.0
#include <set>

#include "doctest.h"
#include "mtdet/augment.hpp"
#include "mtdet/data.hpp"

using namespace mtdet;

namespace {

Tensor ramp(int h, int w) {
  Tensor t({3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) t.at(c, y, x) = (c * 50 + y * 3 + x) % 256;
  return t;
}

}  // namespace

TEST_SUITE("augment") {
  TEST_CASE("image flip mirrors columns and is an involution") {
    const Tensor img = ramp(8, 16);
    const Tensor f = hflip_image(img);
    CHECK(f.at(1, 3, 0) == img.at(1, 3, 15));
    CHECK(hflip_image(f) == img);
  }

  TEST_CASE("resizing to the same size is the identity") {
    const Tensor img = ramp(16, 24);
    CHECK(resize_bilinear(img, 16, 24) == img);
    CHECK(resize_bilinear(img, 8, 40).shape() == Shape{3, 8, 40});
  }

  TEST_CASE("weak plan snaps sides and honours flip probability") {
    WeakAugSettings never;
    never.flip_prob = 0.0;
    WeakAugSettings always;
    always.flip_prob = 1.0;
    std::set<int> sides;
    for (int s = 0; s < 50; ++s) {
      const GeomRecord g = plan_weak(s, 64, 64, never);
      CHECK_FALSE(g.flipped);
      CHECK(g.out_h % 8 == 0);
      sides.insert(g.out_w);
      CHECK(plan_weak(s, 64, 64, always).flipped);
    }
    CHECK(sides == std::set<int>{48, 64, 80});
  }

  TEST_CASE("weak augmentation moves boxes with the pixels") {
    const Scene s = generate_scene(3, SceneSpec{});
    WeakAugSettings flip;
    flip.flip_prob = 1.0;
    flip.scales = {1.0};
    const WeakAugResult r = weak_augment(s.image, s.gt, 5, flip);
    CHECK(r.image == hflip_image(s.image));
    for (std::size_t i = 0; i < s.gt.size(); ++i) CHECK(r.gt[i].box == hflip_box(s.gt[i].box, 64));
    const WeakAugResult again = apply_weak(s.image, s.gt, r.geom);
    CHECK(again.image == r.image);
  }

  TEST_CASE("geometry inverse recovers boxes") {
    const GeomRecord g = plan_weak(7, 64, 64);
    const Box b{5, 6, 30, 41};
    const Box r = invert_geom(g, apply_geom(g, b));
    CHECK(r.x1 == doctest::Approx(b.x1));
    CHECK(r.y2 == doctest::Approx(b.y2));
  }

  TEST_CASE("strong plans round trip through their text form") {
    for (std::uint64_t s = 0; s < 200; ++s) {
      const StrongAugPlan p = plan_strong(s, 64, 100.0);
      CHECK(parse_plan(p.to_line()) == p);
    }
    CHECK_THROWS_AS(parse_plan("op=12"), std::invalid_argument);
  }

  TEST_CASE("strong plan draws every colour op") {
    std::set<int> ops;
    for (std::uint64_t s = 0; s < 500; ++s) ops.insert(static_cast<int>(plan_strong(s, 64).op));
    CHECK(ops.size() == 9);
  }

  TEST_CASE("identity and invert ops") {
    const Tensor img = ramp(8, 8);
    StrongAugPlan p;
    CHECK(apply_strong(img, p) == img);
    p.op = ColorOp::kInvert;
    p.invert = true;
    const Tensor inv = apply_strong(img, p);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(inv[i] == kMaxPixel - img[i]);
  }

  TEST_CASE("cutout fills its patch and nothing else") {
    const Tensor img = ramp(16, 16);
    StrongAugPlan p;
    p.fill = 42.0;
    p.patches = {{0.5, 0.5, 4}};
    const Tensor out = apply_strong(img, p);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        const bool inside = x >= 6 && x < 10 && y >= 6 && y < 10;
        CHECK(out.at(0, y, x) == (inside ? 42.0 : img.at(0, y, x)));
      }
  }

  TEST_CASE("contrast keeps pixels within range") {
    const Tensor img = ramp(8, 8);
    StrongAugPlan p;
    p.op = ColorOp::kContrast;
    p.channel_values = {3.0};
    for (double v : apply_strong(img, p).values()) {
      CHECK(v >= 0);
      CHECK(v <= kMaxPixel);
    }
  }

  TEST_CASE("blur preserves a constant image") {
    const Tensor flat({3, 8, 8}, 77.0);
    const Tensor g = gaussian_blur(flat, 1.5), m = mean_blur(flat, 3);
    for (std::size_t i = 0; i < flat.size(); ++i) {
      CHECK(g[i] == doctest::Approx(77.0));
      CHECK(m[i] == doctest::Approx(77.0));
    }
  }
}
