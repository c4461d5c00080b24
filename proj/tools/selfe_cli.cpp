// Command-line harness for the selfe library. Links the C API only.
//
//   selfe train  --config cfg.txt [--run-dir DIR] [--seed N] [--out DIR]
//   selfe eval   --run-dir DIR [--steps 1,2,4,8,32] [--n N] [--seed N] [--out DIR]
//   selfe sweep  --run-dir DIR --axis s_strategy|eta|omega|steps [--values ...] [--out DIR]
//   selfe verify
//
// Exit codes: 0 success; 1 internal error or failed verification;
// 2 invalid config / unknown axis; 3 training divergence; 4 missing checkpoint.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "selfe/selfe.h"

namespace {

int status_to_exit(selfe_status st) {
  switch (st) {
    case SELFE_OK: return 0;
    case SELFE_ERR_CONFIG: return 2;
    case SELFE_ERR_INVALID_ARG: return 2;
    case SELFE_ERR_DIVERGED: return 3;
    case SELFE_ERR_MISSING_CHECKPOINT: return 4;
    default: return 1;
  }
}

int report(selfe_status st, const char* what) {
  if (st == SELFE_OK) return 0;
  std::fprintf(stderr, "selfe %s failed: %s\n", what, selfe_last_error());
  return status_to_exit(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"selfe: any-step conditional generative modeling on synthetic 2-D data"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "run a full training loop from a config file");
  std::string train_config, train_run_dir, train_out;
  std::uint64_t train_seed = 0;
  bool has_seed = false;
  train->add_option("--config", train_config, "path to the run config")->required();
  train->add_option("--run-dir", train_run_dir, "output run directory (default: config out_dir)");
  train->add_option("--out", train_out, "alias for --run-dir");
  train->add_option("--seed", train_seed, "override the config seed")
      ->each([&](const std::string&) { has_seed = true; });

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a trained run against the exact mixture");
  std::string eval_run_dir, eval_out;
  std::vector<int> eval_steps;
  int eval_n = 0;
  std::uint64_t eval_seed = 0;
  eval->add_option("--run-dir", eval_run_dir, "run directory with checkpoints")->required();
  eval->add_option("--steps", eval_steps, "step counts to evaluate")->delimiter(',');
  eval->add_option("--n", eval_n, "samples per (condition, step-count) cell");
  eval->add_option("--seed", eval_seed, "evaluation seed (default: run config seed)");
  eval->add_option("--out", eval_out, "report directory (default: <run-dir>/eval)");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "compare sampler settings across one axis");
  std::string sweep_run_dir, sweep_axis, sweep_out;
  std::vector<double> sweep_values;
  sweep->add_option("--run-dir", sweep_run_dir, "run directory with checkpoints")->required();
  sweep->add_option("--axis", sweep_axis, "s_strategy | eta | omega | steps")->required();
  sweep->add_option("--values", sweep_values, "axis values (default per axis)")->delimiter(',');
  sweep->add_option("--out", sweep_out, "report directory (default: <run-dir>/sweep)");

  // verify
  auto* verify = app.add_subcommand("verify", "run the numerical property suite");

  CLI11_PARSE(app, argc, argv);

  if (train->parsed()) {
    selfe_config* cfg = nullptr;
    selfe_status st = selfe_config_load(train_config.c_str(), &cfg);
    if (st != SELFE_OK) return report(st, "train");
    if (has_seed) {
      st = selfe_config_set(cfg, "seed", std::to_string(train_seed).c_str());
      if (st != SELFE_OK) {
        selfe_config_free(cfg);
        return report(st, "train");
      }
    }
    const std::string& dir = !train_run_dir.empty() ? train_run_dir : train_out;
    st = selfe_train(cfg, dir.empty() ? nullptr : dir.c_str());
    selfe_config_free(cfg);
    if (st == SELFE_OK) std::printf("training completed\n");
    return report(st, "train");
  }

  if (eval->parsed()) {
    selfe_status st = selfe_eval(eval_run_dir.c_str(), eval_steps.empty() ? nullptr : eval_steps.data(),
                                 static_cast<int>(eval_steps.size()), eval_n, eval_seed,
                                 eval_out.empty() ? nullptr : eval_out.c_str());
    if (st == SELFE_OK) std::printf("evaluation written\n");
    return report(st, "eval");
  }

  if (sweep->parsed()) {
    selfe_status st = selfe_sweep(sweep_run_dir.c_str(), sweep_axis.c_str(),
                                  sweep_values.empty() ? nullptr : sweep_values.data(),
                                  static_cast<int>(sweep_values.size()),
                                  sweep_out.empty() ? nullptr : sweep_out.c_str());
    if (st == SELFE_OK) std::printf("sweep written\n");
    return report(st, "sweep");
  }

  if (verify->parsed()) {
    int failures = 0;
    char* text = nullptr;
    selfe_status st = selfe_verify(&failures, &text);
    if (st != SELFE_OK) return report(st, "verify");
    std::fputs(text, stdout);
    selfe_free(text);
    return failures == 0 ? 0 : 1;
  }

  return 1;
}
