#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mat.hpp"
#include "oracle.hpp"
#include "rng.hpp"

namespace selfe {

struct W2Info {
  double value = 0;
  bool exact = true;
  double epsilon = 0;  // entropic regularization when approximate
};

/// Wasserstein-2 between equal-sized point sets. 1-D uses the sorted
/// coupling; d >= 2 solves the exact assignment up to n = 1024 and an
/// entropic approximation (with recorded regularization) up to n = 4096.
double wasserstein2(const MatXd& a, const MatXd& b);
W2Info wasserstein2_info(const MatXd& a, const MatXd& b);

/// Energy distance V-statistic 2 E||A-B|| - E||A-A'|| - E||B-B'|| >= 0.
double energy_distance(const MatXd& a, const MatXd& b);

/// Standard deviation of W2 over full-size bootstrap resamples of both sets.
double bootstrap_w2_std(const MatXd& a, const MatXd& b, int resamples, Rng& rng);

/// One metric-report row.
struct MetricCell {
  std::string model;
  int condition = 0;
  int n_steps = 0;
  double w2 = 0;
  double w2_floor = 0;  // bootstrap noise floor
  double energy = 0;
  int n = 0;
  std::uint64_t seed = 0;
  bool exact = true;
  double epsilon = 0;
  double wall_ms = 0;  // reported separately from the deterministic CSV
};

/// Abstract sample source: (condition, step count, n, seed) -> points.
using SamplerFn = std::function<MatXd(int condition, int n_steps, int n, std::uint64_t seed)>;

/// Metrics for every (condition, step count) cell against exact oracle
/// samples; a pure function of (sampler, truth, arguments, seed).
std::vector<MetricCell> step_sweep(const SamplerFn& model, const std::string& model_name,
                                   const oracle::GmmCond& truth,
                                   const std::vector<int>& conditions,
                                   const std::vector<int>& steps, int n, std::uint64_t seed,
                                   int bootstrap_resamples);

struct MonotonicityVerdict {
  int condition = 0;
  bool ok = false;
  double worst_jump_sigma = 0;  // largest increase in noise-floor units
};

/// Per-condition verdict: W2 non-increasing in step count, allowing
/// increases up to tolerance * combined bootstrap floor.
std::vector<MonotonicityVerdict> monotonicity_check(const std::vector<MetricCell>& report,
                                                    double tolerance = 3.0);

/// Mean W2 across conditions at one step count, with the matching
/// noise floor of the mean (floors combine in quadrature).
struct AggregateW2 {
  double w2 = 0;
  double floor = 0;
};
AggregateW2 aggregate_w2(const std::vector<MetricCell>& report, int n_steps);

}  // namespace selfe
