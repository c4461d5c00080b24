#include "schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace selfe {

void ScheduleSpec::validate() const {
  if (!(t_min > 0.0 && t_min < 0.5))
    throw std::invalid_argument("ScheduleSpec: t_min must lie in (0, 0.5), got " +
                                std::to_string(t_min));
  if (warp_len < 1)
    throw std::invalid_argument("ScheduleSpec: warp_len must be >= 1");
  if (tau_anneal_iters < 1)
    throw std::invalid_argument("ScheduleSpec: tau_anneal_iters must be >= 1");
  if (!(p_equal >= 0.0 && p_equal <= 1.0))
    throw std::invalid_argument("ScheduleSpec: p_equal must lie in [0, 1]");
}

AlphaSigma alpha_sigma(double t) {
  if (!(t >= 0.0 && t <= 1.0))
    throw std::domain_error("alpha_sigma: t must lie in [0, 1], got " + std::to_string(t));
  return {1.0 - t, t};
}

double warp_mu(int warp_len) {
  if (warp_len <= 1) return 0.0;
  return 0.5 + 0.65 * (static_cast<double>(warp_len) - 512.0) / (4096.0 - 512.0);
}

double warp(double t_raw, double mu) {
  if (!(t_raw > 0.0 && t_raw < 1.0))
    throw std::domain_error("warp: t_raw must lie in (0, 1), got " + std::to_string(t_raw));
  double emu = std::exp(mu);
  return emu / (emu + 1.0 / t_raw - 1.0);
}

double sample_t(Rng& rng, const ScheduleSpec& spec) {
  double z = rng.normal();
  double t_raw = 1.0 / (1.0 + std::exp(-z));  // sigmoid, never exactly 0 or 1
  double t = warp(t_raw, warp_mu(spec.warp_len));
  return std::clamp(t, spec.t_min, 1.0);
}

double sample_s(Rng& rng, double t, long iter, const ScheduleSpec& spec) {
  if (rng.bernoulli(spec.p_equal)) return t;
  double tau = std::min(static_cast<double>(iter) / static_cast<double>(spec.tau_anneal_iters), 1.0);
  double lo = (1.0 - tau) * t;
  double s = rng.uniform(lo, t);
  return std::min(s, t);
}

std::vector<double> inference_grid(int n_steps, double mu) {
  if (n_steps < 1) throw std::invalid_argument("inference_grid: n_steps must be >= 1");
  std::vector<double> grid(static_cast<size_t>(n_steps) + 1);
  grid.front() = 1.0;
  grid.back() = 0.0;
  for (int k = 1; k < n_steps; ++k) {
    double raw = 1.0 - static_cast<double>(k) / static_cast<double>(n_steps);
    grid[static_cast<size_t>(k)] = warp(raw, mu);
  }
  return grid;
}

double pair_weight(double t, double t_min) {
  double tc = std::max(t, t_min);
  return 1.0 / (tc * tc);
}

}  // namespace selfe
