// SPDX-License-Identifier: Apache-2.0
//
// mtdet: corpus generation, teacher/student training, evaluation, ablation
// sweeps and the verification suite.
#include <iostream>

#include "CLI11.hpp"
#include "mtdet/cli.hpp"
#include "mtdet/exit_codes.hpp"

namespace {

void common_flags(CLI::App* cmd, mtdet::cli::Options& opt, const std::string& out_help, bool with_seed = true) {
  cmd->add_option_function<std::string>(
      "--config", [&opt](const std::string& p) { opt.config = p; }, "JSON experiment config (defaults when omitted)");
  cmd->add_option_function<std::string>(
      "--out", [&opt](const std::string& p) { opt.out = p; }, out_help);
  if (with_seed) {
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&opt](std::uint64_t s) { opt.seed = s; }, "override the seed from the config");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Teacher/student semi-supervised detection on a synthetic shapes corpus"};
  app.require_subcommand(1);
  mtdet::cli::Options opt;
  std::string checkpoint, fault, only;

  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic corpus archive");
  common_flags(gen, opt, "corpus directory (overrides corpus.dir)");
  gen->add_flag("--force", opt.force, "overwrite an existing archive");

  CLI::App* train = app.add_subcommand("train", "burn-in then semi-supervised training; resumes from a checkpoint");
  common_flags(train, opt, "run directory (overrides out_dir)");
  train->add_flag("--force", opt.force, "discard an existing run in the output directory");

  CLI::App* eval = app.add_subcommand("eval", "mAP of a checkpoint on the held-out scenes");
  common_flags(eval, opt, "report path (default: <checkpoint>.eval.json)");
  eval->add_option("checkpoint", checkpoint, "a .params file or a run directory (uses its teacher)")->required();

  CLI::App* ablate = app.add_subcommand("ablate", "run a preset sweep and write a comparison table");
  common_flags(ablate, opt, "sweep directory (default: runs/ablate-<preset>)");
  ablate->add_option("--preset", opt.preset, "proposals | update-rules | soft-vs-hard | ensembles | beta-sweep | "
                                             "localization | theta-sweep")
      ->required();
  ablate->add_option("--parallel", opt.parallel, "variants run concurrently")->check(CLI::PositiveNumber);
  ablate->add_flag("--force", opt.force, "rerun over an existing sweep");

  CLI::App* verify = app.add_subcommand("verify", "run every invariant and oracle check");
  common_flags(verify, opt, "write a JSON report here", false);
  verify->add_option("--only", only, "run checks whose name starts with this prefix");
  verify->add_option("--inject-fault", fault, "corrupt the analytic gradient of the named check")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? mtdet::kExitOk : mtdet::kExitUsage;
  }

  return mtdet::cli::guarded(
      [&] {
        if (*gen) return mtdet::cli::cmd_gen_data(opt, std::cout);
        if (*train) return mtdet::cli::cmd_train(opt, std::cout);
        if (*eval) return mtdet::cli::cmd_eval(opt, checkpoint, std::cout);
        if (*ablate) return mtdet::cli::cmd_ablate(opt, std::cout);
        return mtdet::cli::cmd_verify(opt, fault, only, std::cout);
      },
      std::cerr);
}
