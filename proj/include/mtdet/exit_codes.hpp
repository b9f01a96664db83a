// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace mtdet {

/// Process exit codes of the command-line front end.
enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,  // verify found a failing check, or an ablation variant failed
  kExitUsage = 2,
  kExitConfig = 3,
  kExitData = 4,
  kExitNumeric = 5,
  kExitRuntime = 6,
};

}  // namespace mtdet
