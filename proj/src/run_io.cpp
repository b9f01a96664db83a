// SPDX-License-Identifier: Apache-2.0
#include "mtdet/run_io.hpp"

#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace mtdet {

using Json = nlohmann::ordered_json;

namespace {

Json opt(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> opt_from(const Json& j, const char* key) {
  const Json& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

void save_params_atomic(const std::filesystem::path& path, const ParamSet& p) {
  std::ostringstream os;
  p.save(os);
  write_file_atomic(path, os.str());
}

}  // namespace

std::string header_line(const MetricsHeader& h) {
  Json j{{"schema", "mtdet-metrics"},
         {"version", h.version},
         {"run", h.run},
         {"label_mode", h.label_mode},
         {"update_rule", h.update_rule},
         {"ensemble_mode", h.ensemble_mode}};
  return j.dump();
}

std::string record_line(const MetricsRecord& r) {
  Json j{{"iteration", r.iteration},
         {"phase", r.phase},
         {"label_mode", r.label_mode},
         {"loss_sup", r.loss_sup},
         {"loss_unsup", r.loss_unsup},
         {"loss_unsup_rpn_cls", r.loss_unsup_rpn_cls},
         {"loss_unsup_rpn_loc", r.loss_unsup_rpn_loc},
         {"loss_unsup_roi_cls", r.loss_unsup_roi_cls},
         {"loss_unsup_roi_loc", r.loss_unsup_roi_loc},
         {"loss_total", r.loss_total},
         {"teacher_map", opt(r.teacher_map)},
         {"teacher_ap50", opt(r.teacher_ap50)},
         {"student_map", opt(r.student_map)},
         {"student_ap50", opt(r.student_ap50)},
         {"pseudo_proposals", r.pseudo_proposals},
         {"pseudo_confidence", r.pseudo_confidence}};
  return j.dump();
}

MetricsRecord parse_record(const std::string& line) {
  const Json j = Json::parse(line);
  MetricsRecord r;
  r.iteration = j.at("iteration").get<int>();
  r.phase = j.at("phase").get<std::string>();
  r.label_mode = j.at("label_mode").get<std::string>();
  r.loss_sup = j.at("loss_sup").get<double>();
  r.loss_unsup = j.at("loss_unsup").get<double>();
  r.loss_unsup_rpn_cls = j.at("loss_unsup_rpn_cls").get<double>();
  r.loss_unsup_rpn_loc = j.at("loss_unsup_rpn_loc").get<double>();
  r.loss_unsup_roi_cls = j.at("loss_unsup_roi_cls").get<double>();
  r.loss_unsup_roi_loc = j.at("loss_unsup_roi_loc").get<double>();
  r.loss_total = j.at("loss_total").get<double>();
  r.teacher_map = opt_from(j, "teacher_map");
  r.teacher_ap50 = opt_from(j, "teacher_ap50");
  r.student_map = opt_from(j, "student_map");
  r.student_ap50 = opt_from(j, "student_ap50");
  r.pseudo_proposals = j.at("pseudo_proposals").get<double>();
  r.pseudo_confidence = j.at("pseudo_confidence").get<double>();
  return r;
}

MetricsFile read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read metrics " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty metrics file " + path.string());
  const Json h = Json::parse(line, nullptr, false);
  if (h.is_discarded() || !h.is_object() || h.value("schema", "") != "mtdet-metrics") {
    throw std::runtime_error("metrics header missing in " + path.string());
  }
  MetricsFile f;
  f.header.version = h.at("version").get<int>();
  if (f.header.version != kMetricsVersion) {
    throw std::runtime_error("unsupported metrics version " + std::to_string(f.header.version));
  }
  f.header.run = h.at("run").get<std::string>();
  f.header.label_mode = h.at("label_mode").get<std::string>();
  f.header.update_rule = h.at("update_rule").get<std::string>();
  f.header.ensemble_mode = h.at("ensemble_mode").get<std::string>();
  while (std::getline(in, line)) {
    if (!line.empty()) f.records.push_back(parse_record(line));
  }
  return f;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, const MetricsHeader& header)
    : out_(path, std::ios::trunc) {
  if (!out_) throw std::runtime_error("cannot write metrics " + path.string());
  out_ << header_line(header) << "\n";
  out_.flush();
}

MetricsWriter MetricsWriter::resume(const std::filesystem::path& path, int keep_through) {
  const MetricsFile f = read_metrics(path);
  std::ostringstream kept;
  kept << header_line(f.header) << "\n";
  for (const MetricsRecord& r : f.records) {
    if (r.phase != "ssl" || r.iteration <= keep_through) kept << record_line(r) << "\n";
  }
  write_file_atomic(path, kept.str());
  MetricsWriter w;
  w.out_.open(path, std::ios::app);
  if (!w.out_) throw std::runtime_error("cannot append metrics " + path.string());
  return w;
}

void MetricsWriter::write(const MetricsRecord& r) {
  out_ << record_line(r) << "\n";
  out_.flush();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& dir, const TrainerState& state) {
  std::filesystem::create_directories(dir);
  save_params_atomic(dir / "teacher.params", state.teacher);
  save_params_atomic(dir / "student.params", state.student);
  save_params_atomic(dir / "momentum.params", state.optimizer.buffers());
  // state.json last: its presence marks a complete checkpoint.
  write_file_atomic(dir / "state.json", Json{{"iteration", state.iteration}}.dump() + "\n");
}

bool has_checkpoint(const std::filesystem::path& dir) { return std::filesystem::exists(dir / "state.json"); }

TrainerState load_checkpoint(const std::filesystem::path& dir, const TrainConfig& cfg) {
  std::ifstream in(dir / "state.json");
  if (!in) throw std::runtime_error("no checkpoint in " + dir.string());
  const Json j = Json::parse(in);
  TrainerState s;
  s.iteration = j.at("iteration").get<int>();
  s.teacher = ParamSet::load_file((dir / "teacher.params").string());
  s.student = ParamSet::load_file((dir / "student.params").string());
  if (!s.teacher.compatible_with(s.student)) throw std::runtime_error("checkpoint teacher/student mismatch");
  s.optimizer = SgdMomentum(cfg.lr, cfg.momentum);
  s.optimizer.set_buffers(ParamSet::load_file((dir / "momentum.params").string()));
  return s;
}

}  // namespace mtdet
