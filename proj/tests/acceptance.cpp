// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when
// all of them pass.
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtdet/cli.hpp"
#include "mtdet/exit_codes.hpp"
#include "mtdet/trainer.hpp"
#include "mtdet_verify/suite.hpp"

using namespace mtdet;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned limits.
constexpr double kSuiteSeconds = 120.0;     // criteria 1 and 2
constexpr double kEndToEndSeconds = 1800.0;  // criterion 7, all seeds

// End-to-end schedule of criterion 7.
constexpr int kBurnIn = 2000;
constexpr int kSslIters = 3000;
constexpr double kLr = 0.02;
constexpr int kCorpusSize = 2200;
constexpr int kEvalSize = 200;
constexpr std::uint64_t kCorpusSeed = 7;
constexpr double kLabeledFraction = 0.1;
const std::vector<std::uint64_t> kSeeds{1, 2, 3};

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Criterion {
  int id = 0;
  std::string title;
  bool ok = true;
  std::ostringstream detail;
};

void report(Criterion& c) {
  std::cout << (c.ok ? "PASS" : "FAIL") << " criterion " << c.id << ": " << c.title;
  const std::string d = c.detail.str();
  if (!d.empty()) std::cout << " [" << d << "]";
  std::cout << std::endl;
}

/// Runs named checks; returns their summed runtime.
double run_checks(Criterion& c, const std::vector<std::string>& names) {
  double seconds = 0;
  for (const std::string& n : names) {
    const verify::CheckResult r = verify::run_one(n);
    seconds += r.seconds;
    if (!r.passed) {
      c.ok = false;
      c.detail << n << " failed: " << r.detail << "; ";
    }
  }
  return seconds;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void criterion_1(Criterion& c) {
  std::vector<std::string> names;
  for (const auto& info : verify::catalogue())
    if (info.gradient) names.push_back(info.name);
  const double s = run_checks(c, names);
  if (s >= kSuiteSeconds) {
    c.ok = false;
    c.detail << "too slow; ";
  }
  c.detail << names.size() << " gradient checks in " << s << "s";
}

void criterion_2(Criterion& c) {
  const double s = run_checks(c, {"geometry.nms_oracle", "eval.map_oracle", "grad.conv_linear_oracle"});
  if (s >= kSuiteSeconds) {
    c.ok = false;
    c.detail << "too slow; ";
  }
  c.detail << s << "s";
}

void criterion_6(Criterion& c) {
  run_checks(c, {"augment.determinism", "data.corpus_determinism", "trainer.determinism"});
  // Two complete runs through the command-line front end.
  const fs::path root = fs::temp_directory_path() / ("mtdet_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  const nlohmann::json cfg{{"run_name", "determinism"},
                           {"checkpoint_every", 5},
                           {"corpus", {{"dir", (root / "corpus").string()}, {"train_count", 60}, {"eval_count", 10}}},
                           {"train", {{"burn_in_iters", 20}, {"total_iters", 10}, {"eval_every", 5}, {"n_proposals", 64}}}};
  {
    std::ofstream(root / "config.json") << cfg.dump(2);
  }
  cli::Options o;
  o.config = root / "config.json";
  o.quiet = true;
  std::ostringstream log;
  int code = cli::cmd_gen_data(o, log);
  for (const char* run : {"a", "b"}) {
    o.out = root / run;
    if (code == kExitOk) code = cli::cmd_train(o, log);
  }
  if (code != kExitOk) {
    c.ok = false;
    c.detail << "training exited " << code << "; ";
  } else {
    const std::string a = slurp(root / "a" / "metrics.jsonl"), b = slurp(root / "b" / "metrics.jsonl");
    if (a.empty() || a != b) {
      c.ok = false;
      c.detail << "metrics files differ; ";
    } else {
      c.detail << "metrics files identical (" << a.size() << " bytes)";
    }
  }
  fs::remove_all(root);
}

struct SeedOutcome {
  double baseline = 0, ema_teacher = 0, ema_student = 0, fixed_teacher = 0, fixed_student = 0;
};

void criterion_7(Criterion& c) {
  const auto t0 = Clock::now();
  const Corpus corpus = generate_corpus(SceneSpec{}, kCorpusSize, kCorpusSeed);
  std::vector<SeedOutcome> outcomes;
  for (std::uint64_t seed : kSeeds) {
    const DatasetSplit split = split_dataset(kCorpusSize, kLabeledFraction, seed, kEvalSize);
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.lr = kLr;
    cfg.burn_in_iters = kBurnIn;
    cfg.total_iters = 0;
    cfg.log_every = kBurnIn;
    const RunResult burn = run_training(cfg, corpus, split);

    cfg.total_iters = kSslIters;
    cfg.eval_every = kSslIters;
    SeedOutcome s;
    s.baseline = burn.baseline.map;
    cfg.update_rule = UpdateRule::kEmaPerIter;
    const RunResult ema = run_training(cfg, corpus, split, {}, nullptr, &burn.burn_in);
    s.ema_teacher = ema.final_teacher.map;
    s.ema_student = ema.final_student.map;
    cfg.update_rule = UpdateRule::kFixed;
    const RunResult fixed = run_training(cfg, corpus, split, {}, nullptr, &burn.burn_in);
    s.fixed_teacher = fixed.final_teacher.map;
    s.fixed_student = fixed.final_student.map;
    outcomes.push_back(s);
    std::printf("  seed %llu: baseline %.4f  ema teacher %.4f  ema student %.4f  fixed teacher %.4f  fixed student %.4f"
                "  (%.0fs elapsed)\n",
                static_cast<unsigned long long>(seed), s.baseline, s.ema_teacher, s.ema_student, s.fixed_teacher,
                s.fixed_student, since(t0));
    std::fflush(stdout);
  }

  double ema_mean = 0, fixed_mean = 0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const SeedOutcome& s = outcomes[i];
    if (!(s.ema_teacher > s.baseline)) {
      c.ok = false;
      c.detail << "(a) seed " << kSeeds[i] << " teacher does not beat baseline; ";
    }
    if (!(s.ema_teacher >= s.ema_student)) {
      c.ok = false;
      c.detail << "(b) seed " << kSeeds[i] << " student beats teacher; ";
    }
    ema_mean += s.ema_teacher / outcomes.size();
    // The fixed rule's best model is its student; its teacher stays at burn-in.
    fixed_mean += std::max(s.fixed_teacher, s.fixed_student) / outcomes.size();
  }
  if (!(ema_mean >= fixed_mean)) {
    c.ok = false;
    c.detail << "(c) ema mean " << ema_mean << " below fixed mean " << fixed_mean << "; ";
  }
  const double seconds = since(t0);
  if (seconds >= kEndToEndSeconds) {
    c.ok = false;
    c.detail << "too slow; ";
  }
  c.detail << "ema mean " << ema_mean << " vs fixed mean " << fixed_mean << ", " << seconds << "s";
}

}  // namespace

int main() {
  std::vector<std::pair<std::string, std::function<void(Criterion&)>>> plan{
      {"gradient checks on every op and composite loss", criterion_1},
      {"NMS, mAP and conv/linear oracle equivalence", criterion_2},
      {"EMA closed form at t in {1, 10, 1000}",
       [](Criterion& c) { run_checks(c, {"trainer.ema_closed_form"}); }},
      {"loss identities (identical models, beta=0 / n_U=0, localization off)",
       [](Criterion& c) {
         run_checks(c, {"trainer.unsup_identical_zero", "trainer.beta_zero_bitwise", "trainer.localization_off_zero_grad"});
       }},
      {"flip-ensemble mirror symmetry", [](Criterion& c) { run_checks(c, {"pseudo.flip_symmetry"}); }},
      {"determinism of runs, augmentation and data", criterion_6},
      {"directional end-to-end over 3 seeds", criterion_7},
      {"hard-label threshold fixture", [](Criterion& c) { run_checks(c, {"pseudo.hard_filter_fixture"}); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    Criterion c;
    c.id = static_cast<int>(i + 1);
    c.title = plan[i].first;
    try {
      plan[i].second(c);
    } catch (const std::exception& e) {
      c.ok = false;
      c.detail << "error: " << e.what();
    }
    report(c);
    if (!c.ok) ++failed;
  }
  std::cout << (plan.size() - failed) << "/" << plan.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
