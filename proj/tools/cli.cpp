// SPDX-License-Identifier: Apache-2.0
#include "mtdet/cli.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "mtdet/exit_codes.hpp"
#include "mtdet/run_io.hpp"
#include "mtdet_verify/suite.hpp"

namespace mtdet::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Corpus load_checked_corpus(const ExperimentConfig& cfg) {
  if (!fs::exists(fs::path(cfg.corpus.dir) / "manifest.txt")) {
    throw DataError("no corpus at '" + cfg.corpus.dir + "'; run gen-data first");
  }
  Corpus c = load_corpus(cfg.corpus.dir);
  if (!(c.spec == cfg.scene)) throw DataError("corpus at '" + cfg.corpus.dir + "' was generated from a different scene spec");
  const std::size_t want = static_cast<std::size_t>(cfg.corpus.train_count) + cfg.corpus.eval_count;
  if (c.size() != want) {
    throw DataError("corpus has " + std::to_string(c.size()) + " scenes, config expects " + std::to_string(want));
  }
  return c;
}

DatasetSplit make_split(const ExperimentConfig& cfg, const Corpus& c) {
  return split_dataset(static_cast<int>(c.size()), cfg.split.fraction, cfg.split.seed, cfg.corpus.eval_count);
}

MetricsHeader header_for(const ExperimentConfig& cfg) {
  return {cfg.run_name, to_string(cfg.train.label_mode), to_string(cfg.train.update_rule), to_string(cfg.train.ensemble)};
}

Json eval_json(const EvalResult& r) { return Json{{"map", r.map}, {"ap50", r.ap50}}; }

void write_summary(const fs::path& dir, const RunResult& r) {
  const Json j{{"baseline", eval_json(r.baseline)},
               {"final_teacher", eval_json(r.final_teacher)},
               {"final_student", eval_json(r.final_student)}};
  write_file_atomic(dir / "summary.json", j.dump(2) + "\n");
}

void save_params(const fs::path& p, const ParamSet& params) {
  std::ostringstream os;
  params.save(os);
  write_file_atomic(p, os.str());
}

}  // namespace

int guarded(const std::function<int()>& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

ExperimentConfig resolve_config(const Options& opt, bool for_data) {
  ExperimentConfig c = opt.config ? load_config(*opt.config) : default_config();
  if (opt.seed) {
    if (for_data) {
      c.corpus.seed = *opt.seed;
    } else {
      c.train.seed = *opt.seed;
      c.split.seed = *opt.seed;
    }
  }
  if (opt.out) {
    if (for_data) {
      c.corpus.dir = opt.out->string();
    } else {
      c.out_dir = opt.out->string();
    }
  }
  validate(c);
  return c;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Options& opt, std::ostream& log) {
  const ExperimentConfig cfg = resolve_config(opt, true);
  const fs::path dir = cfg.corpus.dir;
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!opt.force) throw DataError("'" + dir.string() + "' is not empty; pass --force to overwrite");
    for (const char* f : {"manifest.txt", "gt.txt", "images.bin", "config.resolved.json"}) fs::remove(dir / f);
  }
  const auto t0 = std::chrono::steady_clock::now();
  const int count = cfg.corpus.train_count + cfg.corpus.eval_count;
  const Corpus corpus = generate_corpus(cfg.scene, count, cfg.corpus.seed);
  try {
    save_corpus(corpus, dir);
    write_file_atomic(dir / "config.resolved.json", to_json(cfg) + "\n");
  } catch (const fs::filesystem_error& e) {
    throw DataError(std::string("cannot write corpus: ") + e.what());
  }

  const Corpus back = load_corpus(dir);
  if (back.size() != corpus.size()) throw DataError("read-back scene count differs from the requested count");

  std::vector<int> per_class(cfg.scene.classes.size(), 0);
  std::size_t objects = 0;
  for (const Scene& s : corpus.scenes) {
    objects += s.gt.size();
    for (const GtObject& o : s.gt) ++per_class[static_cast<std::size_t>(o.class_id)];
  }
  log << "corpus " << dir.string() << ": " << corpus.size() << " scenes (" << cfg.corpus.train_count << " train + "
      << cfg.corpus.eval_count << " eval), " << cfg.scene.image_w << "x" << cfg.scene.image_h << ", seed "
      << cfg.corpus.seed << "\n";
  log << "objects " << objects << " (";
  for (std::size_t k = 0; k < per_class.size(); ++k) {
    log << (k ? ", " : "") << kind_name(cfg.scene.classes[k].kind) << " " << per_class[k];
  }
  log << "), " << fmt(seconds_since(t0), 2) << "s\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_train(const Options& opt, std::ostream& log) {
  const ExperimentConfig cfg = resolve_config(opt, false);
  const Corpus corpus = load_checked_corpus(cfg);
  const DatasetSplit split = make_split(cfg, corpus);
  const fs::path out = cfg.out_dir;
  const fs::path ckpt = out / "checkpoint";
  const fs::path metrics = out / "metrics.jsonl";
  const fs::path saved_cfg = out / "config.resolved.json";
  const std::string resolved = to_json(cfg) + "\n";

  bool resume = false;
  if (fs::exists(metrics) || fs::exists(ckpt)) {
    const bool same = fs::exists(saved_cfg) && read_text(saved_cfg) == resolved;
    if (opt.force) {
      fs::remove_all(ckpt);
      for (const char* f : {"metrics.jsonl", "config.resolved.json", "summary.json", "error.json", "teacher.params",
                            "student.params", "burn_in.params"}) {
        fs::remove(out / f);
      }
    } else if (!same) {
      throw ConfigError("'" + out.string() + "' holds a run with a different config; pass --force to replace it");
    } else {
      resume = has_checkpoint(ckpt) && fs::exists(ckpt / "burn_in.params") && fs::exists(metrics);
    }
  }
  fs::create_directories(out);
  write_file_atomic(saved_cfg, resolved);

  std::optional<TrainerState> state;
  ParamSet burn;
  std::optional<MetricsWriter> writer;
  if (resume) {
    state = load_checkpoint(ckpt, cfg.train);
    burn = ParamSet::load_file((ckpt / "burn_in.params").string());
    writer.emplace(MetricsWriter::resume(metrics, state->iteration));
    if (!opt.quiet) log << "resuming " << out.string() << " at iteration " << state->iteration << "\n";
  } else {
    writer.emplace(metrics, header_for(cfg));
  }

  const auto t0 = std::chrono::steady_clock::now();
  int last_iteration = resume ? state->iteration : 0;
  RunHooks hooks;
  hooks.on_record = [&](const MetricsRecord& r) {
    writer->write(r);
    if (opt.quiet) return;
    if (r.teacher_map) {
      log << r.phase << " " << r.iteration << "  teacher mAP " << fmt(*r.teacher_map) << "  student mAP "
          << fmt(*r.student_map) << "  L_S " << fmt(r.loss_sup) << "  L_U " << fmt(r.loss_unsup) << "  ("
          << fmt(seconds_since(t0), 1) << "s)\n";
    } else if (r.phase == "burn_in" && r.iteration % 100 == 0) {
      log << "burn_in " << r.iteration << "  L_S " << fmt(r.loss_sup) << "\n";
    }
  };
  hooks.on_burn_in = [&](const ParamSet& p) {
    fs::create_directories(ckpt);
    save_params(ckpt / "burn_in.params", p);
    save_params(out / "burn_in.params", p);
  };
  hooks.on_step = [&](const TrainerState& s) {
    last_iteration = s.iteration;
    if (s.iteration % cfg.checkpoint_every == 0 || s.iteration == cfg.train.total_iters) save_checkpoint(ckpt, s);
  };

  RunResult result;
  try {
    result = run_training(cfg.train, corpus, split, hooks, state ? &*state : nullptr, resume ? &burn : nullptr);
  } catch (const NumericError& e) {
    const Json diag{{"error", "numeric"}, {"message", e.what()}, {"last_completed_iteration", last_iteration}};
    write_file_atomic(out / "error.json", diag.dump(2) + "\n");
    throw;
  }
  save_params(out / "teacher.params", result.teacher);
  save_params(out / "student.params", result.student);
  write_summary(out, result);
  log << "run " << cfg.run_name << " (" << to_string(cfg.train.label_mode) << ", " << to_string(cfg.train.update_rule)
      << ", " << to_string(cfg.train.ensemble) << "): baseline mAP " << fmt(result.baseline.map) << ", teacher mAP "
      << fmt(result.final_teacher.map) << ", student mAP " << fmt(result.final_student.map) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_eval(const Options& opt, const fs::path& checkpoint, std::ostream& log) {
  Options copy = opt;
  copy.out.reset();  // --out names the report here, not the run dir
  const ExperimentConfig cfg = resolve_config(copy, false);
  fs::path file = checkpoint;
  if (fs::is_directory(file)) file /= "teacher.params";
  if (!fs::exists(file)) throw DataError("no checkpoint at '" + file.string() + "'");
  ParamSet params;
  try {
    params = ParamSet::load_file(file.string());
  } catch (const std::exception& e) {
    throw DataError("cannot read checkpoint '" + file.string() + "': " + e.what());
  }
  const Corpus corpus = load_checked_corpus(cfg);
  DetectorConfig dc;
  try {
    dc = detector_config_of(params);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  if (dc.num_classes != static_cast<int>(corpus.spec.classes.size())) {
    throw DataError("checkpoint predicts " + std::to_string(dc.num_classes) + " classes, corpus has " +
                    std::to_string(corpus.spec.classes.size()));
  }
  const DatasetSplit split = make_split(cfg, corpus);
  const EvalResult r = evaluate_params(params, corpus, split.eval, cfg.train);

  fs::path report = opt.out ? *opt.out : fs::path(file).replace_extension(".eval.json");
  const Json j{{"checkpoint", file.string()},
               {"images", split.eval.size()},
               {"map", r.map},
               {"ap50", r.ap50}};
  if (report.has_parent_path()) fs::create_directories(report.parent_path());
  write_file_atomic(report, j.dump(2) + "\n");
  write_file_atomic(fs::path(report).replace_extension(".config.json"), to_json(cfg) + "\n");
  log << file.string() << ": mAP(50:95) " << fmt(r.map) << "  AP50 " << fmt(r.ap50) << "  on " << split.eval.size()
      << " held-out scenes\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

std::vector<std::string> preset_names() {
  return {"proposals", "update-rules", "soft-vs-hard", "ensembles", "beta-sweep", "localization", "theta-sweep"};
}

std::vector<Variant> preset_variants(const std::string& preset, const ExperimentConfig& base) {
  std::vector<Variant> out;
  auto add = [&](std::string name, const std::function<void(TrainConfig&)>& edit) {
    Variant v{std::move(name), base};
    edit(v.config.train);
    v.config.run_name = base.run_name + "/" + v.name;
    out.push_back(std::move(v));
  };
  auto hard = [](TrainConfig& t) {
    t.label_mode = LabelMode::kHard;
    t.beta = 0.1;
  };
  if (preset == "proposals") {
    for (int n : {8, 32, 128, 640, 2000}) add("n" + std::to_string(n), [n](TrainConfig& t) { t.n_proposals = n; });
  } else if (preset == "update-rules") {
    for (UpdateRule r : {UpdateRule::kEmaPerIter, UpdateRule::kCopyEveryK, UpdateRule::kFixed}) {
      add(to_string(r), [r](TrainConfig& t) { t.update_rule = r; });
    }
  } else if (preset == "soft-vs-hard") {
    add("soft", [](TrainConfig& t) { t.label_mode = LabelMode::kSoft; });
    add("hard", hard);
  } else if (preset == "ensembles") {
    for (EnsembleMode e : {EnsembleMode::kNone, EnsembleMode::kFlip, EnsembleMode::kRandomAug}) {
      add(to_string(e), [e](TrainConfig& t) { t.ensemble = e; });
    }
  } else if (preset == "beta-sweep") {
    for (int k = 1; k <= 8; ++k) {
      add("beta" + fmt(k / 10.0, 1), [k](TrainConfig& t) { t.beta = k / 10.0; });
    }
  } else if (preset == "localization") {
    add("loc_on", [](TrainConfig& t) { t.unsup_localization = true; });
    add("loc_off", [](TrainConfig& t) { t.unsup_localization = false; });
  } else if (preset == "theta-sweep") {
    for (int k = 5; k <= 9; ++k) {
      add("theta" + fmt(k / 10.0, 1), [&, k](TrainConfig& t) {
        hard(t);
        t.theta = k / 10.0;
      });
    }
  } else {
    std::string known;
    for (const std::string& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + preset + "' (known: " + known + ")");
  }
  return out;
}

int cmd_ablate(const Options& opt, std::ostream& log) {
  if (opt.preset.empty()) throw ConfigError("ablate needs --preset");
  Options base_opt = opt;
  base_opt.out.reset();
  const ExperimentConfig base = resolve_config(base_opt, false);
  const std::vector<Variant> variants = preset_variants(opt.preset, base);
  const fs::path root = opt.out ? *opt.out : fs::path("runs") / ("ablate-" + opt.preset);
  if (fs::exists(root / "summary.tsv") && !opt.force) {
    throw DataError("'" + root.string() + "' already holds a sweep; pass --force to rerun it");
  }
  const Corpus corpus = load_checked_corpus(base);
  const DatasetSplit split = make_split(base, corpus);
  fs::create_directories(root);
  write_file_atomic(root / "config.resolved.json", to_json(base) + "\n");

  // Presets vary only semi-supervised fields, so one burn-in serves every variant.
  std::vector<MetricsRecord> burn_records;
  ParamSet burn;
  {
    TrainConfig t = base.train;
    t.total_iters = 0;
    RunHooks h;
    h.on_record = [&](const MetricsRecord& r) {
      if (r.phase == "burn_in") burn_records.push_back(r);
    };
    if (!opt.quiet) log << "burn-in: " << t.burn_in_iters << " iterations\n";
    burn = run_training(t, corpus, split, h).burn_in;
  }
  save_params(root / "burn_in.params", burn);

  struct Row {
    bool ok = false;
    std::string error;
    RunResult result;
    double seconds = 0;
  };
  std::vector<Row> rows(variants.size());
  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < variants.size(); i = next++) {
      const Variant& v = variants[i];
      const fs::path dir = root / v.name;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        fs::create_directories(dir);
        ExperimentConfig vc = v.config;
        vc.out_dir = dir.string();
        write_file_atomic(dir / "config.resolved.json", to_json(vc) + "\n");
        MetricsWriter w(dir / "metrics.jsonl", header_for(vc));
        for (const MetricsRecord& r : burn_records) w.write(r);
        RunHooks h;
        h.on_record = [&](const MetricsRecord& r) { w.write(r); };
        rows[i].result = run_training(vc.train, corpus, split, h, nullptr, &burn);
        save_params(dir / "teacher.params", rows[i].result.teacher);
        save_params(dir / "student.params", rows[i].result.student);
        write_summary(dir, rows[i].result);
        rows[i].ok = true;
      } catch (const std::exception& e) {
        rows[i].error = e.what();
      }
      rows[i].seconds = seconds_since(t0);
      if (!opt.quiet) {
        std::lock_guard<std::mutex> lock(log_mutex);
        log << "variant " << v.name << ": "
            << (rows[i].ok ? "teacher mAP " + fmt(rows[i].result.final_teacher.map) : "FAILED: " + rows[i].error) << " ("
            << fmt(rows[i].seconds, 1) << "s)\n";
      }
    }
  };
  const int threads = std::max(1, std::min<int>(opt.parallel, static_cast<int>(variants.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  std::ostringstream tsv;
  tsv << "variant\tstatus\tteacher_map\tstudent_map\tteacher_ap50\tstudent_ap50\tbaseline_map\tseconds\n";
  int failed = 0;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const Row& r = rows[i];
    failed += r.ok ? 0 : 1;
    tsv << variants[i].name << "\t" << (r.ok ? "ok" : "failed");
    if (r.ok) {
      tsv << "\t" << fmt(r.result.final_teacher.map, 6) << "\t" << fmt(r.result.final_student.map, 6) << "\t"
          << fmt(r.result.final_teacher.ap50, 6) << "\t" << fmt(r.result.final_student.ap50, 6) << "\t"
          << fmt(r.result.baseline.map, 6);
    } else {
      tsv << "\t\t\t\t\t";
    }
    tsv << "\t" << fmt(r.seconds, 1) << "\n";
  }
  write_file_atomic(root / "summary.tsv", tsv.str());

  log << "\n" << std::left << std::setw(16) << "variant" << std::setw(10) << "status" << std::setw(14) << "teacher mAP"
      << std::setw(14) << "student mAP" << "\n";
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const Row& r = rows[i];
    log << std::setw(16) << variants[i].name << std::setw(10) << (r.ok ? "ok" : "failed") << std::setw(14)
        << (r.ok ? fmt(r.result.final_teacher.map) : "-") << std::setw(14) << (r.ok ? fmt(r.result.final_student.map) : "-")
        << "\n";
    if (!r.ok) log << "  " << r.error << "\n";
  }
  log << "summary: " << (root / "summary.tsv").string() << "\n";
  return failed == 0 ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------------------

int cmd_verify(const Options& opt, const std::string& inject_fault, const std::string& only, std::ostream& log) {
  verify::Options vo;
  vo.fault = inject_fault;
  vo.filter = only;
  int failed = 0;
  Json report = Json::array();
  try {
    verify::run(vo, [&](const verify::CheckResult& r) {
      failed += r.passed ? 0 : 1;
      log << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(36) << r.name << std::right << std::setw(8)
          << fmt(r.seconds, 2) << "s" << (r.detail.empty() ? "" : "  " + r.detail) << "\n";
      log.flush();
      report.push_back(Json{{"name", r.name}, {"passed", r.passed}, {"detail", r.detail}, {"seconds", r.seconds}});
    });
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  log << report.size() - failed << "/" << report.size() << " checks passed\n";
  if (opt.out) {
    if (opt.out->has_parent_path()) fs::create_directories(opt.out->parent_path());
    write_file_atomic(*opt.out, report.dump(2) + "\n");
  }
  return failed == 0 ? kExitOk : kExitCheckFailed;
}

}  // namespace mtdet::cli
