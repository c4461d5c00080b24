#pragma once

#include <vector>

#include "rng.hpp"

namespace selfe {

/// Noise-schedule and timestep-sampling parameters.
struct ScheduleSpec {
  double t_min = 1e-3;          // floor for sampled t and for pair weights
  int warp_len = 1;             // length proxy driving the time warp; 1 = no warp
  long tau_anneal_iters = 6000; // iterations over which the s-interval opens up
  double p_equal = 0.5;         // probability of drawing s = t

  void validate() const;  // throws std::invalid_argument on bad fields
};

/// Primary/secondary time pair; s <= t always.
struct TimePair {
  double t;
  double s;
};

struct AlphaSigma {
  double alpha;
  double sigma;
};

/// Rectified schedule coefficients (alpha_t, sigma_t) = (1 - t, t).
AlphaSigma alpha_sigma(double t);

/// Warp shift for a given length proxy: 0 for warp_len <= 1, otherwise the
/// affine interpolation through (512 -> 0.5) and (4096 -> 1.15).
double warp_mu(int warp_len);

/// Length-compensating time warp e^mu / (e^mu + 1/t_raw - 1) on (0, 1).
double warp(double t_raw, double mu);

/// Primary time draw: logit-normal, warped, clamped to [t_min, 1].
double sample_t(Rng& rng, const ScheduleSpec& spec);

/// Secondary time draw: s = t with probability p_equal, otherwise uniform on
/// [(1 - tau) * t, t] with tau = min(iter / tau_anneal_iters, 1).
double sample_s(Rng& rng, double t, long iter, const ScheduleSpec& spec);

/// Descending inference grid of n_steps + 1 points: a linear grid mapped
/// through the warp, endpoints pinned to exactly 1 and 0.
std::vector<double> inference_grid(int n_steps, double mu);

/// Per-pair loss weight 1 / max(t, t_min)^2.
double pair_weight(double t, double t_min);

}  // namespace selfe
