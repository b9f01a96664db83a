// SPDX-License-Identifier: Apache-2.0
//
// Semi-supervised teacher/student training: supervised burn-in, joint steps on
// L = L_S + beta * (n_U / n_S) * L_U, and the teacher update rules.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mtdet/augment.hpp"
#include "mtdet/data.hpp"
#include "mtdet/detector.hpp"
#include "mtdet/params.hpp"
#include "mtdet/pseudo_label.hpp"

namespace mtdet {

enum class LabelMode { kSoft, kHard };
enum class UpdateRule { kEmaPerIter, kCopyEveryK, kFixed };

const char* to_string(LabelMode m);
const char* to_string(UpdateRule r);
const char* to_string(EnsembleMode m);
LabelMode label_mode_from(const std::string& s);
UpdateRule update_rule_from(const std::string& s);
EnsembleMode ensemble_mode_from(const std::string& s);

struct TrainConfig {
  double beta = 0.5;
  double alpha = 0.999;
  int n_proposals = 640;
  double theta = 0.7;
  LabelMode label_mode = LabelMode::kSoft;
  UpdateRule update_rule = UpdateRule::kEmaPerIter;
  int copy_every = 10000;
  EnsembleMode ensemble = EnsembleMode::kFlip;
  bool unsup_localization = true;
  int burn_in_iters = 2000;
  int total_iters = 3000;
  double lr = 0.02;
  double momentum = 0.9;
  int n_labeled = 2;    // n_S per batch
  int n_unlabeled = 2;  // n_U per batch
  std::uint64_t seed = 1;
  int eval_every = 500;
  int log_every = 10;
  double hard_nms = 0.5;
  double eval_score_thresh = 0.01;
  double eval_nms = 0.5;
  DetectorConfig detector;
  DetectorSettings settings;
  WeakAugSettings weak;

  /// Throws std::invalid_argument on out-of-range fields.
  void validate() const;
};

struct MetricsRecord {
  int iteration = 0;
  std::string phase;  // "burn_in" or "ssl"
  double loss_sup = 0;
  double loss_unsup = 0;
  double loss_unsup_rpn_cls = 0, loss_unsup_rpn_loc = 0, loss_unsup_roi_cls = 0, loss_unsup_roi_loc = 0;
  double loss_total = 0;
  std::optional<double> teacher_map, teacher_ap50, student_map, student_ap50;
  double pseudo_proposals = 0;  // mean proposals (soft) or pseudo boxes (hard) per unlabeled image
  double pseudo_confidence = 0;
  std::string label_mode;
};

/// One labeled or unlabeled training example.
struct Sample {
  const Tensor* image = nullptr;
  const GroundTruth* gt = nullptr;  // ignored for unlabeled samples
};

struct TrainerState {
  ParamSet student;
  ParamSet teacher;
  SgdMomentum optimizer{0.01, 0.9};
  int iteration = 0;  // completed semi-supervised steps
};

// ---- loss pieces ----

struct UnsupTerms {
  Var cls;
  Var loc;
  Var total;
};

/// Sum over all anchors of KL(t || s) plus ||t_reg - s_reg||_2; the
/// localisation sum is a constant zero when `localization` is false. Throws
/// ShapeError on anchor-count mismatch.
UnsupTerms unsup_rpn_loss(Graph& g, const RpnVars& student, const RpnTargets& targets, bool localization);

/// Same over the teacher's proposals, with the L2 norm over all 4*C deltas.
UnsupTerms unsup_roi_loss(Graph& g, const RoiVars& student, const RoiTargets& targets, bool localization);

/// L_S + beta * (n_U / n_S) * L_U.
double total_loss(double l_sup, double l_unsup, int n_s, int n_u, double beta);

/// Supervised loss of the student on the strong view against hard pseudo boxes.
LossTerms hard_label_loss(Graph& g, const BoundParams& student, const DetectorConfig& cfg,
                          const DetectorSettings& s, const Tensor& strong_image, const HardPseudoGT& pseudo,
                          std::uint64_t seed);

// ---- training ----

/// Per-iteration callback for burn-in progress (iteration, mean L_S).
using BurnInObserver = std::function<void(int, double)>;

/// Supervised-only training from a fresh init. Throws std::invalid_argument on
/// an empty labeled set.
ParamSet burn_in(const std::vector<Sample>& labeled, const TrainConfig& cfg, const BurnInObserver& observe = {});

/// One joint step; returns the step's metrics (without mAP).
MetricsRecord train_step(TrainerState& state, const std::vector<Sample>& labeled,
                         const std::vector<Sample>& unlabeled, const TrainConfig& cfg, double fill);

/// Applies the configured rule after `state.iteration` completed steps.
void update_teacher(TrainerState& state, const TrainConfig& cfg);

struct EvalResult {
  double map = 0;
  double ap50 = 0;
};
EvalResult evaluate_params(const ParamSet& params, const Corpus& corpus, const std::vector<int>& ids,
                           const TrainConfig& cfg);

/// Batch composition for a given iteration: indices into the labeled and
/// unlabeled id lists, drawn from the run seed.
std::vector<int> draw_batch(std::uint64_t seed, std::uint64_t stream, int iteration, int batch, int pool);

struct RunHooks {
  std::function<void(const MetricsRecord&)> on_record;
  /// Called once with the burn-in weights (skipped when they are supplied).
  std::function<void(const ParamSet&)> on_burn_in;
  /// Called after each completed SSL step; used for checkpointing.
  std::function<void(const TrainerState&)> on_step;
};

struct RunResult {
  ParamSet burn_in;
  ParamSet teacher;
  ParamSet student;
  EvalResult baseline;
  EvalResult final_teacher;
  EvalResult final_student;
  std::vector<MetricsRecord> records;
};

/// Burn-in (or `resume` state), then total_iters semi-supervised steps with
/// periodic evaluation of both teacher and student on split.eval.
RunResult run_training(const TrainConfig& cfg, const Corpus& corpus, const DatasetSplit& split,
                       const RunHooks& hooks = {}, const TrainerState* resume = nullptr,
                       const ParamSet* burn_in_params = nullptr);

}  // namespace mtdet
