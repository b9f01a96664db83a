// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "mtdet/data.hpp"
#include "mtdet/run_io.hpp"
#include "mtdet/trainer.hpp"
#include "mtdet_verify/oracles.hpp"

using namespace mtdet;
using testing::random_tensor;

namespace {

struct Tiny {
  Corpus corpus = generate_corpus(SceneSpec{}, 24, 5);
  DatasetSplit split = split_dataset(24, 0.25, 3, 4);
  TrainConfig cfg;
  Tiny() {
    cfg.burn_in_iters = 3;
    cfg.total_iters = 4;
    cfg.eval_every = 2;
    cfg.log_every = 1;
    cfg.n_proposals = 32;
    cfg.seed = 9;
  }
  std::vector<Sample> labeled() const {
    std::vector<Sample> out;
    for (int id : split.labeled) out.push_back({&corpus.scenes[id].image, &corpus.scenes[id].gt});
    return out;
  }
  std::vector<Sample> unlabeled() const {
    std::vector<Sample> out;
    for (int id : split.unlabeled) out.push_back({&corpus.scenes[id].image, nullptr});
    return out;
  }
  TrainerState start() const {
    TrainerState s;
    s.student = s.teacher = burn_in(labeled(), cfg);
    s.optimizer = SgdMomentum(cfg.lr, cfg.momentum);
    return s;
  }
};

std::string lines(const std::vector<MetricsRecord>& rs) {
  std::string out;
  for (const MetricsRecord& r : rs) out += record_line(r) + "\n";
  return out;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("total loss weighting") {
    CHECK(total_loss(1.0, 2.0, 2, 2, 0.5) == doctest::Approx(2.0));
    CHECK(total_loss(1.0, 2.0, 2, 4, 0.5) == doctest::Approx(3.0));
    CHECK(total_loss(1.0, 2.0, 2, 2, 0.0) == 1.0);
  }

  TEST_CASE("unsupervised rpn loss equals summed KL plus row norms") {
    std::mt19937_64 rng(1);
    const Tensor s_logits = random_tensor({6, 2}, rng, -2, 2), s_deltas = random_tensor({6, 4}, rng);
    RpnTargets t{oracle::softmax_rows(random_tensor({6, 2}, rng, -2, 2)), random_tensor({6, 4}, rng)};
    Graph g;
    const RpnVars rv{g.constant(s_logits), g.constant(s_deltas)};
    const UnsupTerms u = unsup_rpn_loss(g, rv, t, true);
    double norms = 0;
    for (int r = 0; r < 6; ++r) {
      double sq = 0;
      for (int c = 0; c < 4; ++c) sq += std::pow(t.deltas.at(r, c) - s_deltas.at(r, c), 2);
      norms += std::sqrt(sq);
    }
    CHECK(g.value(u.cls)[0] == doctest::Approx(oracle::kl(t.objectness, oracle::softmax_rows(s_logits))));
    CHECK(g.value(u.loc)[0] == doctest::Approx(norms));
    CHECK(g.value(u.total)[0] == doctest::Approx(g.value(u.cls)[0] + norms));
    const UnsupTerms off = unsup_rpn_loss(g, rv, t, false);
    CHECK(g.value(off.loc)[0] == 0.0);
    RpnTargets short_t{Tensor({5, 2}, 0.5), Tensor({5, 4}, 0.0)};
    CHECK_THROWS_AS(unsup_rpn_loss(g, rv, short_t, true), ShapeError);
  }

  TEST_CASE("unsupervised roi loss with no proposals is zero") {
    Graph g;
    const RoiVars rv{g.constant(Tensor({0, 4})), g.constant(Tensor({0, 12}))};
    const UnsupTerms u = unsup_roi_loss(g, rv, RoiTargets{Tensor({0, 4}), Tensor({0, 12})}, true);
    CHECK(g.value(u.total)[0] == 0.0);
  }

  TEST_CASE("hard-label loss is the supervised loss on pseudo boxes") {
    const DetectorConfig cfg;
    const ParamSet p = init_detector(cfg, 3);
    const Scene s = generate_scene(4, SceneSpec{});
    const HardPseudoGT pseudo{s.gt, std::vector<double>(s.gt.size(), 0.9)};
    Graph g1, g2;
    BoundParams b1(g1, p, true), b2(g2, p, true);
    const double a = g1.value(hard_label_loss(g1, b1, cfg, {}, s.image, pseudo, 7).total)[0];
    const double b = g2.value(supervised_loss(g2, b2, cfg, {}, s.image, s.gt, 7).total)[0];
    CHECK(a == b);
    Graph g3;
    BoundParams b3(g3, p, true);
    CHECK(std::isfinite(g3.value(hard_label_loss(g3, b3, cfg, {}, s.image, HardPseudoGT{}, 7).total)[0]));
  }

  TEST_CASE("batches are seeded draws with replacement") {
    const auto a = draw_batch(1, 2, 3, 50, 10), b = draw_batch(1, 2, 3, 50, 10), c = draw_batch(1, 2, 4, 50, 10);
    CHECK(a == b);
    CHECK(a != c);
    CHECK(std::set<int>(a.begin(), a.end()).size() < a.size());
    for (int v : a) CHECK((v >= 0 && v < 10));
  }

  TEST_CASE("teacher update rules") {
    TrainerState st;
    st.teacher.add("w", Tensor({1}, 1.0));
    st.student.add("w", Tensor({1}, 0.0));
    TrainConfig cfg;
    cfg.update_rule = UpdateRule::kCopyEveryK;
    cfg.copy_every = 3;
    for (int it : {1, 2}) {
      st.iteration = it;
      update_teacher(st, cfg);
      CHECK(st.teacher.get("w")[0] == 1.0);
    }
    st.iteration = 3;
    update_teacher(st, cfg);
    CHECK(st.teacher.get("w")[0] == 0.0);
    st.teacher.get("w")[0] = 1.0;
    cfg.update_rule = UpdateRule::kFixed;
    for (int i = 0; i < 10; ++i) update_teacher(st, cfg);
    CHECK(st.teacher.get("w")[0] == 1.0);
    cfg.update_rule = UpdateRule::kEmaPerIter;
    cfg.alpha = 0.5;
    update_teacher(st, cfg);
    CHECK(st.teacher.get("w")[0] == 0.5);
  }

  TEST_CASE("config validation rejects out-of-range fields") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.beta = -1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.alpha = 1.5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.n_proposals = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.theta = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }

  TEST_CASE("enum names round trip") {
    for (UpdateRule r : {UpdateRule::kEmaPerIter, UpdateRule::kCopyEveryK, UpdateRule::kFixed})
      CHECK(update_rule_from(to_string(r)) == r);
    for (LabelMode m : {LabelMode::kSoft, LabelMode::kHard}) CHECK(label_mode_from(to_string(m)) == m);
    for (EnsembleMode e : {EnsembleMode::kNone, EnsembleMode::kFlip, EnsembleMode::kRandomAug})
      CHECK(ensemble_mode_from(to_string(e)) == e);
    CHECK_THROWS(update_rule_from("sometimes"));
  }

  TEST_CASE("a step's total equals supervised plus weighted unsupervised") {
    Tiny t;
    TrainerState st = t.start();
    const MetricsRecord r = train_step(st, t.labeled(), t.unlabeled(), t.cfg, 127.5);
    CHECK(r.iteration == 1);
    CHECK(st.iteration == 1);
    CHECK(r.loss_unsup > 0);
    CHECK(r.loss_total == doctest::Approx(total_loss(r.loss_sup, r.loss_unsup, 2, 2, t.cfg.beta)).epsilon(1e-12));
    CHECK(r.loss_unsup == doctest::Approx(r.loss_unsup_rpn_cls + r.loss_unsup_rpn_loc + r.loss_unsup_roi_cls +
                                          r.loss_unsup_roi_loc)
                              .epsilon(1e-12));
    CHECK(r.pseudo_proposals > 0);
    CHECK(r.pseudo_proposals <= t.cfg.n_proposals);
  }

  TEST_CASE("hard mode step reports pseudo boxes and its mode") {
    Tiny t;
    t.cfg.label_mode = LabelMode::kHard;
    t.cfg.theta = 0.05;
    TrainerState st = t.start();
    const MetricsRecord r = train_step(st, t.labeled(), t.unlabeled(), t.cfg, 127.5);
    CHECK(r.label_mode == "hard");
    CHECK(r.loss_total == doctest::Approx(total_loss(r.loss_sup, r.loss_unsup, 2, 2, t.cfg.beta)).epsilon(1e-12));
  }

  TEST_CASE("burn-in needs labeled data") {
    Tiny t;
    CHECK_THROWS_AS(burn_in({}, t.cfg), std::invalid_argument);
  }

  TEST_CASE("run records: burn-in, baseline at 0, evaluation cadence") {
    Tiny t;
    const RunResult r = run_training(t.cfg, t.corpus, t.split);
    int burn = 0;
    std::vector<int> evals;
    for (const MetricsRecord& m : r.records) {
      if (m.phase == "burn_in") ++burn;
      if (m.phase == "ssl" && m.teacher_map) evals.push_back(m.iteration);
    }
    CHECK(burn == 3);
    CHECK(evals == std::vector<int>{0, 2, 4});
    CHECK(*r.records[burn].teacher_map == r.baseline.map);
    CHECK(r.final_teacher.map == *r.records.back().teacher_map);
    CHECK(r.baseline.map == evaluate_params(r.burn_in, t.corpus, t.split.eval, t.cfg).map);
  }

  TEST_CASE("resuming from a mid-run state reproduces the uninterrupted run") {
    Tiny t;
    std::optional<TrainerState> mid;
    RunHooks h;
    h.on_step = [&](const TrainerState& s) {
      if (s.iteration == 2) mid = s;
    };
    const RunResult full = run_training(t.cfg, t.corpus, t.split, h);
    REQUIRE(mid);
    const RunResult resumed = run_training(t.cfg, t.corpus, t.split, {}, &*mid, &full.burn_in);
    CHECK(resumed.teacher == full.teacher);
    CHECK(resumed.student == full.student);
    std::vector<MetricsRecord> tail;
    for (const MetricsRecord& m : full.records)
      if (m.phase == "ssl" && m.iteration > 2) tail.push_back(m);
    CHECK(lines(resumed.records) == lines(tail));
    CHECK_THROWS_AS(run_training(t.cfg, t.corpus, t.split, {}, &*mid, nullptr), std::invalid_argument);
  }

  TEST_CASE("momentum buffers are not averaged into the teacher") {
    Tiny t;
    TrainerState st = t.start();
    train_step(st, t.labeled(), t.unlabeled(), t.cfg, 127.5);
    CHECK(st.optimizer.buffers().size() == st.student.size());
    CHECK_FALSE(st.teacher == st.student);
  }
}
