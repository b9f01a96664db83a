// SPDX-License-Identifier: Apache-2.0
#include "mtdet/trainer.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "mtdet/eval.hpp"
#include "mtdet/rng.hpp"

namespace mtdet {

namespace {

// Seed stream labels.
constexpr std::uint64_t kBurnIn = 11;
constexpr std::uint64_t kSsl = 12;
constexpr std::uint64_t kLabeledBatch = 21;
constexpr std::uint64_t kUnlabeledBatch = 22;
constexpr std::uint64_t kWeak = 31;
constexpr std::uint64_t kPlan = 32;
constexpr std::uint64_t kStrong = 33;
constexpr std::uint64_t kEnsemble = 34;
constexpr std::uint64_t kInit = 41;

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0.0; }

// Mean supervised loss over one labeled batch; weak augmentation applies to
// labeled images too.
Var supervised_batch(Graph& g, const BoundParams& sp, const std::vector<Sample>& labeled, const TrainConfig& cfg,
                     std::uint64_t stream, int iteration, double* value) {
  const std::vector<int> batch =
      draw_batch(cfg.seed, derive_seed(stream, {kLabeledBatch}), iteration, cfg.n_labeled, static_cast<int>(labeled.size()));
  Var acc = g.constant(Tensor::scalar(0.0));
  for (std::size_t slot = 0; slot < batch.size(); ++slot) {
    const Sample& s = labeled[batch[slot]];
    const std::uint64_t base = derive_seed(cfg.seed, {stream, static_cast<std::uint64_t>(iteration), slot});
    const WeakAugResult weak = weak_augment(*s.image, *s.gt, derive_seed(base, {kWeak}), cfg.weak);
    const LossTerms t =
        supervised_loss(g, sp, cfg.detector, cfg.settings, weak.image, weak.gt, derive_seed(base, {kPlan}));
    acc = add(g, acc, t.total);
  }
  Var mean = scale(g, acc, 1.0 / static_cast<double>(batch.size()));
  *value = g.value(mean)[0];
  return mean;
}

void check_gradients(const ParamSet& grads) {
  for (const std::string& n : grads.names()) {
    if (!grads.get(n).all_finite()) throw NumericError("non-finite gradient in " + n);
  }
}

}  // namespace

const char* to_string(LabelMode m) { return m == LabelMode::kSoft ? "soft" : "hard"; }

const char* to_string(UpdateRule r) {
  switch (r) {
    case UpdateRule::kEmaPerIter:
      return "ema_per_iter";
    case UpdateRule::kCopyEveryK:
      return "copy_every_k";
    case UpdateRule::kFixed:
      return "fixed";
  }
  return "?";
}

const char* to_string(EnsembleMode m) {
  switch (m) {
    case EnsembleMode::kNone:
      return "none";
    case EnsembleMode::kFlip:
      return "flip";
    case EnsembleMode::kRandomAug:
      return "random_aug";
  }
  return "?";
}

LabelMode label_mode_from(const std::string& s) {
  if (s == "soft") return LabelMode::kSoft;
  if (s == "hard") return LabelMode::kHard;
  throw std::invalid_argument("unknown label_mode '" + s + "'");
}

UpdateRule update_rule_from(const std::string& s) {
  if (s == "ema_per_iter") return UpdateRule::kEmaPerIter;
  if (s == "copy_every_k") return UpdateRule::kCopyEveryK;
  if (s == "fixed") return UpdateRule::kFixed;
  throw std::invalid_argument("unknown update_rule '" + s + "'");
}

EnsembleMode ensemble_mode_from(const std::string& s) {
  if (s == "none") return EnsembleMode::kNone;
  if (s == "flip") return EnsembleMode::kFlip;
  if (s == "random_aug") return EnsembleMode::kRandomAug;
  throw std::invalid_argument("unknown ensemble_mode '" + s + "'");
}

void TrainConfig::validate() const {
  require(std::isfinite(beta) && beta >= 0.0, "beta must be >= 0");
  require(alpha >= 0.0 && alpha <= 1.0, "alpha must be in [0, 1]");
  require(theta > 0.0 && theta <= 1.0, "theta must be in (0, 1]");
  require(n_proposals >= 1, "n_proposals must be >= 1");
  require(copy_every >= 1, "copy_every must be >= 1");
  require(burn_in_iters >= 0 && total_iters >= 0, "iteration counts must be >= 0");
  require(lr > 0.0 && std::isfinite(lr), "lr must be > 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
  require(n_labeled >= 1, "n_labeled must be >= 1");
  require(n_unlabeled >= 0, "n_unlabeled must be >= 0");
  require(eval_every >= 1 && log_every >= 1, "eval_every and log_every must be >= 1");
  require(hard_nms > 0.0 && hard_nms <= 1.0, "hard_nms must be in (0, 1]");
  require(eval_nms > 0.0 && eval_nms <= 1.0, "eval_nms must be in (0, 1]");
  require(eval_score_thresh >= 0.0 && eval_score_thresh < 1.0, "eval_score_thresh must be in [0, 1)");
  require(detector.num_classes >= 1, "num_classes must be >= 1");
}

UnsupTerms unsup_rpn_loss(Graph& g, const RpnVars& student, const RpnTargets& targets, bool localization) {
  const Tensor& logits = g.value(student.logits);
  if (logits.dim(0) != targets.objectness.dim(0) || g.value(student.deltas).dim(0) != targets.deltas.dim(0)) {
    throw ShapeError("unsup_rpn_loss: anchor count " + std::to_string(logits.dim(0)) + " vs teacher " +
                     std::to_string(targets.objectness.dim(0)));
  }
  UnsupTerms t;
  t.cls = kl_div(g, targets.objectness, softmax_rows(g, student.logits));
  t.loc = localization ? row_l2_norm_sum(g, student.deltas, targets.deltas) : g.constant(Tensor::scalar(0.0));
  t.total = add(g, t.cls, t.loc);
  return t;
}

UnsupTerms unsup_roi_loss(Graph& g, const RoiVars& student, const RoiTargets& targets, bool localization) {
  const Tensor& logits = g.value(student.logits);
  if (logits.dim(0) != targets.probs.dim(0) || g.value(student.deltas).dim(0) != targets.deltas.dim(0)) {
    throw ShapeError("unsup_roi_loss: proposal count " + std::to_string(logits.dim(0)) + " vs teacher " +
                     std::to_string(targets.probs.dim(0)));
  }
  UnsupTerms t;
  if (logits.dim(0) == 0) {
    t.cls = g.constant(Tensor::scalar(0.0));
    t.loc = g.constant(Tensor::scalar(0.0));
    t.total = g.constant(Tensor::scalar(0.0));
    return t;
  }
  t.cls = kl_div(g, targets.probs, softmax_rows(g, student.logits));
  t.loc = localization ? row_l2_norm_sum(g, student.deltas, targets.deltas) : g.constant(Tensor::scalar(0.0));
  t.total = add(g, t.cls, t.loc);
  return t;
}

double total_loss(double l_sup, double l_unsup, int n_s, int n_u, double beta) {
  if (n_s < 1) throw std::invalid_argument("total_loss: n_S must be >= 1");
  return l_sup + beta * (static_cast<double>(n_u) / n_s) * l_unsup;
}

LossTerms hard_label_loss(Graph& g, const BoundParams& student, const DetectorConfig& cfg, const DetectorSettings& s,
                          const Tensor& strong_image, const HardPseudoGT& pseudo, std::uint64_t seed) {
  return supervised_loss(g, student, cfg, s, strong_image, pseudo.gt, seed);
}

std::vector<int> draw_batch(std::uint64_t seed, std::uint64_t stream, int iteration, int batch, int pool) {
  if (pool <= 0) throw std::invalid_argument("draw_batch: empty pool");
  std::mt19937_64 rng(derive_seed(seed, {stream, static_cast<std::uint64_t>(iteration)}));
  std::vector<int> out(static_cast<std::size_t>(batch));
  for (int& v : out) v = static_cast<int>(rng() % static_cast<std::uint64_t>(pool));
  return out;
}

ParamSet burn_in(const std::vector<Sample>& labeled, const TrainConfig& cfg, const BurnInObserver& observe) {
  if (labeled.empty()) throw std::invalid_argument("burn_in: labeled set is empty");
  cfg.validate();
  ParamSet params = init_detector(cfg.detector, derive_seed(cfg.seed, {kInit}));
  SgdMomentum opt(cfg.lr, cfg.momentum);
  for (int it = 0; it < cfg.burn_in_iters; ++it) {
    Graph g;
    BoundParams sp(g, params, true);
    double value = 0;
    const Var loss = supervised_batch(g, sp, labeled, cfg, kBurnIn, it, &value);
    if (!std::isfinite(value)) throw NumericError("burn-in: non-finite loss at iteration " + std::to_string(it));
    g.backward(loss);
    const ParamSet grads = sp.gradients(g);
    check_gradients(grads);
    opt.step(params, grads);
    if (observe) observe(it, value);
  }
  return params;
}

MetricsRecord train_step(TrainerState& state, const std::vector<Sample>& labeled, const std::vector<Sample>& unlabeled,
                         const TrainConfig& cfg, double fill) {
  const int it = state.iteration;
  Graph g;
  BoundParams sp(g, state.student, true);

  MetricsRecord rec;
  rec.iteration = it + 1;
  rec.phase = "ssl";
  rec.label_mode = to_string(cfg.label_mode);

  Var loss = supervised_batch(g, sp, labeled, cfg, kSsl, it, &rec.loss_sup);

  const int n_u = unlabeled.empty() ? 0 : cfg.n_unlabeled;
  if (n_u > 0 && cfg.beta > 0.0) {
    const std::vector<int> batch =
        draw_batch(cfg.seed, derive_seed(kSsl, {kUnlabeledBatch}), it, n_u, static_cast<int>(unlabeled.size()));
    Var acc = g.constant(Tensor::scalar(0.0));
    double rpn_cls = 0, rpn_loc = 0, roi_cls = 0, roi_loc = 0, props = 0, conf = 0;
    for (std::size_t slot = 0; slot < batch.size(); ++slot) {
      const Sample& s = unlabeled[batch[slot]];
      const std::uint64_t base =
          derive_seed(cfg.seed, {kSsl, static_cast<std::uint64_t>(it), 1000 + slot});
      // Teacher and student share one weak view; the student adds the strong ops.
      const WeakAugResult weak = weak_augment(*s.image, {}, derive_seed(base, {kWeak}), cfg.weak);
      const Tensor strong =
          apply_strong(weak.image, plan_strong(derive_seed(base, {kStrong}), weak.image.dim(1), fill));

      if (cfg.label_mode == LabelMode::kSoft) {
        PseudoLabelSettings ps;
        ps.n_proposals = cfg.n_proposals;
        ps.rpn_nms = cfg.settings.rpn_nms;
        ps.ensemble = cfg.ensemble;
        ps.aug_seed = derive_seed(base, {kEnsemble});
        ps.fill = fill;
        const SoftPseudoLabel label = make_soft_label(state.teacher, weak.image, ps);

        const Var feats = backbone_forward(g, sp, cfg.detector, strong);
        const RpnVars rpn = rpn_forward(g, sp, cfg.detector, feats);
        const UnsupTerms ur = unsup_rpn_loss(g, rpn, label.rpn, cfg.unsup_localization);
        const double n_anchor = label.rpn.objectness.dim(0);
        Var img_loss = scale(g, ur.total, 1.0 / n_anchor);
        rpn_cls += g.value(ur.cls)[0] / n_anchor;
        rpn_loc += g.value(ur.loc)[0] / n_anchor;
        if (!label.proposals.empty()) {
          const RoiVars roi = roi_forward(g, sp, cfg.detector, feats, label.proposals);
          const UnsupTerms uo = unsup_roi_loss(g, roi, label.roi, cfg.unsup_localization);
          const double n_prop = static_cast<double>(label.proposals.size());
          img_loss = add(g, img_loss, scale(g, uo.total, 1.0 / n_prop));
          roi_cls += g.value(uo.cls)[0] / n_prop;
          roi_loc += g.value(uo.loc)[0] / n_prop;
        }
        acc = add(g, acc, img_loss);
        props += static_cast<double>(label.proposals.size());
        conf += mean_max_confidence(label.roi);
      } else {
        const HardPseudoGT pseudo = make_hard_label(state.teacher, weak.image, cfg.theta, cfg.hard_nms, cfg.settings);
        const LossTerms t =
            hard_label_loss(g, sp, cfg.detector, cfg.settings, strong, pseudo, derive_seed(base, {kPlan}));
        const LossBreakdown b = breakdown(g, t);
        rpn_cls += b.rpn_cls;
        rpn_loc += b.rpn_loc;
        roi_cls += b.roi_cls;
        roi_loc += b.roi_loc;
        acc = add(g, acc, t.total);
        props += static_cast<double>(pseudo.gt.size());
        double top = 0;
        for (double v : pseudo.scores) top += v;
        conf += pseudo.scores.empty() ? 0.0 : top / pseudo.scores.size();
      }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    const Var l_u = scale(g, acc, inv);
    rec.loss_unsup = g.value(l_u)[0];
    rec.loss_unsup_rpn_cls = rpn_cls * inv;
    rec.loss_unsup_rpn_loc = rpn_loc * inv;
    rec.loss_unsup_roi_cls = roi_cls * inv;
    rec.loss_unsup_roi_loc = roi_loc * inv;
    rec.pseudo_proposals = props * inv;
    rec.pseudo_confidence = conf * inv;
    loss = add(g, loss, scale(g, l_u, cfg.beta * static_cast<double>(n_u) / cfg.n_labeled));
  }
  rec.loss_total = g.value(loss)[0];

  for (double v : {rec.loss_sup, rec.loss_unsup, rec.loss_unsup_rpn_cls, rec.loss_unsup_rpn_loc,
                   rec.loss_unsup_roi_cls, rec.loss_unsup_roi_loc, rec.loss_total}) {
    if (!finite_nonneg(v)) throw NumericError("non-finite or negative loss at iteration " + std::to_string(it + 1));
  }

  g.backward(loss);
  const ParamSet grads = sp.gradients(g);
  check_gradients(grads);
  state.optimizer.step(state.student, grads);
  state.iteration = it + 1;
  update_teacher(state, cfg);
  return rec;
}

void update_teacher(TrainerState& state, const TrainConfig& cfg) {
  switch (cfg.update_rule) {
    case UpdateRule::kEmaPerIter:
      ema_update(state.teacher, state.student, cfg.alpha);
      break;
    case UpdateRule::kCopyEveryK:
      if (state.iteration > 0 && state.iteration % cfg.copy_every == 0) state.teacher = state.student;
      break;
    case UpdateRule::kFixed:
      break;
  }
}

EvalResult evaluate_params(const ParamSet& params, const Corpus& corpus, const std::vector<int>& ids,
                           const TrainConfig& cfg) {
  std::vector<std::vector<ScoredBox>> dets;
  std::vector<GroundTruth> gt;
  dets.reserve(ids.size());
  gt.reserve(ids.size());
  for (int id : ids) {
    const Scene& s = corpus.scenes.at(static_cast<std::size_t>(id));
    dets.push_back(detect(s.image, params, cfg.eval_score_thresh, cfg.eval_nms, cfg.settings));
    gt.push_back(s.gt);
  }
  const MapResult r = evaluate_map(dets, gt);
  return {r.map, r.ap50};
}

RunResult run_training(const TrainConfig& cfg, const Corpus& corpus, const DatasetSplit& split, const RunHooks& hooks,
                       const TrainerState* resume, const ParamSet* burn_in_params) {
  cfg.validate();
  if (resume && !burn_in_params) throw std::invalid_argument("run_training: resuming needs the burn-in weights");
  std::vector<Sample> labeled, unlabeled;
  for (int id : split.labeled) labeled.push_back({&corpus.scenes.at(id).image, &corpus.scenes.at(id).gt});
  for (int id : split.unlabeled) unlabeled.push_back({&corpus.scenes.at(id).image, nullptr});
  if (labeled.empty()) throw std::invalid_argument("run_training: labeled set is empty");
  const double fill = mean_pixel(corpus, split.labeled);

  RunResult out;
  auto emit = [&](const MetricsRecord& r) {
    out.records.push_back(r);
    if (hooks.on_record) hooks.on_record(r);
  };

  if (burn_in_params) {
    out.burn_in = *burn_in_params;
  } else {
    out.burn_in = burn_in(labeled, cfg, [&](int it, double loss) {
      if ((it + 1) % cfg.log_every != 0 && it + 1 != cfg.burn_in_iters) return;
      MetricsRecord r;
      r.iteration = it + 1;
      r.phase = "burn_in";
      r.label_mode = to_string(cfg.label_mode);
      r.loss_sup = loss;
      r.loss_total = loss;
      emit(r);
    });
    if (hooks.on_burn_in) hooks.on_burn_in(out.burn_in);
  }
  out.baseline = evaluate_params(out.burn_in, corpus, split.eval, cfg);

  TrainerState state;
  state.optimizer = SgdMomentum(cfg.lr, cfg.momentum);
  if (resume) {
    state = *resume;
  } else {
    state.student = out.burn_in;
    state.teacher = out.burn_in;
    MetricsRecord r;
    r.iteration = 0;
    r.phase = "ssl";
    r.label_mode = to_string(cfg.label_mode);
    r.teacher_map = r.student_map = out.baseline.map;
    r.teacher_ap50 = r.student_ap50 = out.baseline.ap50;
    emit(r);
  }

  while (state.iteration < cfg.total_iters) {
    MetricsRecord r = train_step(state, labeled, unlabeled, cfg, fill);
    const bool last = state.iteration == cfg.total_iters;
    if (state.iteration % cfg.eval_every == 0 || last) {
      const EvalResult t = evaluate_params(state.teacher, corpus, split.eval, cfg);
      const EvalResult s = evaluate_params(state.student, corpus, split.eval, cfg);
      r.teacher_map = t.map;
      r.teacher_ap50 = t.ap50;
      r.student_map = s.map;
      r.student_ap50 = s.ap50;
    }
    if (r.teacher_map || state.iteration % cfg.log_every == 0) emit(r);
    if (hooks.on_step) hooks.on_step(state);
  }

  out.teacher = state.teacher;
  out.student = state.student;
  if (!out.records.empty() && out.records.back().teacher_map && out.records.back().iteration == state.iteration &&
      out.records.back().phase == "ssl") {
    out.final_teacher = {*out.records.back().teacher_map, *out.records.back().teacher_ap50};
    out.final_student = {*out.records.back().student_map, *out.records.back().student_ap50};
  } else {
    out.final_teacher = evaluate_params(state.teacher, corpus, split.eval, cfg);
    out.final_student = evaluate_params(state.student, corpus, split.eval, cfg);
  }
  return out;
}

}  // namespace mtdet
