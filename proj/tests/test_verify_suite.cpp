// SPDX-License-Identifier: Apache-2.0
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "mtdet_verify/suite.hpp"

using namespace mtdet;

TEST_SUITE("verify") {
  TEST_CASE("catalogue names are unique and cover every module") {
    std::set<std::string> names;
    for (const auto& c : verify::catalogue()) CHECK(names.insert(c.name).second);
    for (const char* n : {"geometry.nms_oracle", "grad.conv2d", "grad.roi_pool", "detector.supervised_loss_grad",
                          "augment.determinism", "pseudo.flip_symmetry", "pseudo.hard_filter_fixture",
                          "trainer.ema_closed_form", "trainer.unsup_identical_zero", "trainer.beta_zero_bitwise",
                          "trainer.localization_off_zero_grad", "eval.map_oracle", "data.corpus_determinism"})
      CHECK(names.count(n) == 1);
  }

  TEST_CASE("every gradient check detects an injected fault") {
    int n = 0;
    for (const auto& c : verify::catalogue()) {
      if (!c.gradient) continue;
      ++n;
      CAPTURE(c.name);
      CHECK(verify::run_one(c.name).passed);
      CHECK_FALSE(verify::run_one(c.name, c.name).passed);
    }
    CHECK(n >= 20);
  }

  TEST_CASE("fault names are checked") {
    verify::Options o;
    o.fault = "grad.nothing";
    CHECK_THROWS_AS(verify::run(o), std::invalid_argument);
    o.fault = "geometry.nms_oracle";
    CHECK_THROWS_AS(verify::run(o), std::invalid_argument);
  }

  TEST_CASE("the full suite passes") {
    int seen = 0;
    const auto results = verify::run({}, [&](const verify::CheckResult&) { ++seen; });
    CHECK(seen == static_cast<int>(results.size()));
    CHECK(results.size() == verify::catalogue().size());
    for (const auto& r : results) {
      CAPTURE(r.name);
      CAPTURE(r.detail);
      CHECK(r.passed);
    }
  }
}
