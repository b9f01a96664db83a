// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: a JSON document binding every training, detector
// and scene field. Omitted keys keep their defaults, unknown keys are errors.
// Environment variables MTDET_<SECTION>_<KEY> (upper case) override file
// values, e.g. MTDET_TRAIN_BETA=0.25 or MTDET_SPLIT_FRACTION=0.05.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

#include "mtdet/data.hpp"
#include "mtdet/trainer.hpp"

namespace mtdet {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CorpusConfig {
  std::string dir = "data/corpus";
  int train_count = 2000;
  int eval_count = 200;
  std::uint64_t seed = 7;
};

struct SplitConfig {
  double fraction = 0.1;
  std::uint64_t seed = 1;
};

struct ExperimentConfig {
  std::string run_name = "default";
  std::string out_dir = "runs/default";
  int checkpoint_every = 500;
  CorpusConfig corpus;
  SceneSpec scene;
  SplitConfig split;
  TrainConfig train;
};

/// Looks up an environment variable; injectable for tests.
using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
EnvLookup process_env();

/// Parses a JSON document, applies environment overrides and validates.
/// Throws ConfigError with the offending key on any problem.
ExperimentConfig parse_config(const std::string& text, const EnvLookup& env = process_env());
ExperimentConfig load_config(const std::filesystem::path& path, const EnvLookup& env = process_env());

/// Defaults plus environment overrides.
ExperimentConfig default_config(const EnvLookup& env = process_env());

/// Every field, fully resolved; parse_config(to_json(c)) reproduces c.
std::string to_json(const ExperimentConfig& c);

/// Range checks across sections; throws ConfigError.
void validate(const ExperimentConfig& c);

}  // namespace mtdet
