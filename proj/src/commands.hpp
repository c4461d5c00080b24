#pragma once

#include <filesystem>
#include <optional>

#include "config.hpp"
#include "evalsuite.hpp"

namespace selfe {

struct EvalOptions {
  std::vector<int> steps;          // empty: use the run config's eval.steps
  int n_samples = 0;               // <= 0: use the run config
  std::optional<std::uint64_t> seed;
  std::filesystem::path out_dir;   // empty: <run_dir>/eval
};

/// Load the config snapshot of a completed run.
RunConfig load_run_config(const std::filesystem::path& run_dir);

/// Evaluate the latest checkpoint across step counts and conditions; writes
/// report.csv, plot_w2_vs_steps.csv, summary.txt and a timing sidecar.
std::vector<MetricCell> run_eval(const std::filesystem::path& run_dir, const EvalOptions& opt);

/// Evaluate one checkpoint across an axis of sampler settings
/// (s_strategy | eta | omega | steps); writes sweep_<axis>.csv plus plot data.
std::vector<MetricCell> run_sweep(const std::filesystem::path& run_dir, const std::string& axis,
                                  std::vector<double> values, const EvalOptions& opt);

/// Draw samples from a run's checkpoint with explicit sampler settings.
MatXd run_sample(const std::filesystem::path& run_dir, int condition, int n, int steps,
                 double eta, double omega, GuidanceMode guidance, double rho,
                 std::uint64_t seed, bool use_ema);

}  // namespace selfe
