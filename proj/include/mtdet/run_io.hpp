// SPDX-License-Identifier: Apache-2.0
//
// Metrics stream and checkpoint files of a training run.
//
// Metrics file: JSON lines. Line 1 is the header
//   {"schema":"mtdet-metrics","version":1,"run":..., "label_mode":..., "update_rule":..., "ensemble_mode":...}
// and every further line one record with keys iteration, phase, label_mode,
// loss_sup, loss_unsup, loss_unsup_rpn_cls, loss_unsup_rpn_loc,
// loss_unsup_roi_cls, loss_unsup_roi_loc, loss_total, teacher_map,
// teacher_ap50, student_map, student_ap50 (null when not evaluated),
// pseudo_proposals, pseudo_confidence.
#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mtdet/trainer.hpp"

namespace mtdet {

inline constexpr int kMetricsVersion = 1;

struct MetricsHeader {
  std::string run;
  std::string label_mode;
  std::string update_rule;
  std::string ensemble_mode;
  int version = kMetricsVersion;
};

std::string header_line(const MetricsHeader& h);
std::string record_line(const MetricsRecord& r);
MetricsRecord parse_record(const std::string& line);

struct MetricsFile {
  MetricsHeader header;
  std::vector<MetricsRecord> records;
};
/// Throws std::runtime_error on a missing file, bad header or unknown version.
MetricsFile read_metrics(const std::filesystem::path& path);

/// Append-only writer, flushed after every record.
class MetricsWriter {
 public:
  /// Starts a new file with `header`.
  MetricsWriter(const std::filesystem::path& path, const MetricsHeader& header);
  /// Reopens an existing file, dropping SSL records past `keep_through` so a
  /// resumed run continues the stream without duplicates.
  static MetricsWriter resume(const std::filesystem::path& path, int keep_through);
  void write(const MetricsRecord& r);

 private:
  MetricsWriter() = default;
  std::ofstream out_;
};

/// Checkpoint directory layout: burn_in.params, teacher.params,
/// student.params, momentum.params and state.json ({"iteration": n}).
void save_checkpoint(const std::filesystem::path& dir, const TrainerState& state);
TrainerState load_checkpoint(const std::filesystem::path& dir, const TrainConfig& cfg);
bool has_checkpoint(const std::filesystem::path& dir);

/// Writes `text` to `path` through a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace mtdet
