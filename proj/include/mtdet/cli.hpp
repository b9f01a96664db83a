// SPDX-License-Identifier: Apache-2.0
//
// Subcommand implementations behind the `mtdet` executable. Each returns a
// process exit code (see exit_codes.hpp) and writes progress to `log`.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mtdet/config.hpp"

namespace mtdet::cli {

struct Options {
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  bool force = false;
  int parallel = 1;
  std::string preset;
  bool quiet = false;
};

/// Config file (or defaults) plus env overrides, then the command-line
/// overrides. `for_data` routes --seed and --out to the corpus section;
/// otherwise --seed sets the training and split seeds and --out the run dir.
ExperimentConfig resolve_config(const Options& opt, bool for_data);

int cmd_gen_data(const Options& opt, std::ostream& log);
int cmd_train(const Options& opt, std::ostream& log);

/// `checkpoint` is a .params file or a run directory (its teacher is used).
int cmd_eval(const Options& opt, const std::filesystem::path& checkpoint, std::ostream& log);

struct Variant {
  std::string name;
  ExperimentConfig config;
};
std::vector<std::string> preset_names();
/// Throws ConfigError for an unknown preset.
std::vector<Variant> preset_variants(const std::string& preset, const ExperimentConfig& base);

int cmd_ablate(const Options& opt, std::ostream& log);

int cmd_verify(const Options& opt, const std::string& inject_fault, const std::string& only, std::ostream& log);

/// Runs `fn`, mapping ConfigError, DataError and NumericError to their exit
/// codes and anything else to kExitRuntime, with the message on `err`.
int guarded(const std::function<int()>& fn, std::ostream& err);

}  // namespace mtdet::cli
