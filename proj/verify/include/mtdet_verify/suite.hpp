// SPDX-License-Identifier: Apache-2.0
//
// Named invariant and oracle checks over every module, shared by the `verify`
// subcommand, the unit tests and the acceptance binary.
#pragma once

#include <functional>
#include <string>
#include <vector>

namespace mtdet::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

struct Options {
  /// Name of a gradient check whose analytic gradient is corrupted before
  /// comparison; empty for a clean run.
  std::string fault;
  /// Only run checks whose name starts with this prefix.
  std::string filter;
};

struct CheckInfo {
  std::string name;
  std::string description;
  bool gradient = false;  // accepts fault injection
};

const std::vector<CheckInfo>& catalogue();

/// Throws std::invalid_argument for an unknown fault name.
std::vector<CheckResult> run(const Options& opt, const std::function<void(const CheckResult&)>& on_result = {});

/// Runs a single check by name.
CheckResult run_one(const std::string& name, const std::string& fault = "");

// Tolerances.
inline constexpr double kOpGradTol = 1e-4;
inline constexpr double kCompositeGradTol = 1e-3;
inline constexpr double kOracleTol = 1e-10;
inline constexpr double kEmaTol = 1e-9;
inline constexpr double kSymmetryTol = 1e-9;

}  // namespace mtdet::verify
