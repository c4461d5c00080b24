#pragma once

#include <functional>

#include "backbone.hpp"
#include "mat.hpp"
#include "rng.hpp"
#include "schedule.hpp"

namespace selfe {

enum class GuidanceMode { Off, Standard, EnergyPreserving };

/// Any-step inference settings. Defaults follow the training recipe's
/// inference setup: eta = 1, omega = 5 with energy-preserving guidance, and
/// s_k equal to the next grid time (rho = 0).
struct SamplerConfig {
  int n_steps = 8;
  double eta = 1.0;
  double omega = 5.0;
  GuidanceMode guidance = GuidanceMode::EnergyPreserving;
  double rho = 0.0;  // s_k = t_{k+1} + rho * (t_k - t_{k+1})
  double mu = 0.0;   // inference-grid warp shift
  std::uint64_t seed = 0;

  void validate() const {
    if (n_steps < 1) throw std::invalid_argument("SamplerConfig: n_steps must be >= 1");
    if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("SamplerConfig: eta in [0, 1]");
    if (!(omega >= 1.0)) throw std::invalid_argument("SamplerConfig: omega must be >= 1");
    if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("SamplerConfig: rho in [0, 1]");
  }
};

/// Batched conditional velocity oracle: (x, t, s, c) -> velocity rows.
using CondVelocityFn =
    std::function<MatXd(const MatXd& x, double t, double s, const ConditionToken& c)>;

template <typename T>
CondVelocityFn make_velocity_fn(const Network<T>& net) {
  return [&net](const MatXd& x, double t, double s, const ConditionToken& c) {
    Mat<T> xb = x.cast<T>();
    VecXd tv = VecXd::Constant(x.rows(), t), sv = VecXd::Constant(x.rows(), s);
    std::vector<int> rows(static_cast<size_t>(x.rows()), c.row(net.cfg.classes));
    return net.velocity(xb, tv, sv, rows).template cast<double>().eval();
  };
}

/// Secondary timestep for one grid interval: s_k = t_next + rho * (t_k - t_next).
double s_for_interval(double t_k, double t_next, double rho);

/// Classifier-free guided velocity. Standard guidance forms
/// omega * V_c - (omega - 1) * V_phi; the energy-preserving mode rescales the
/// guided clean estimate to the conditional estimate's norm per sample.
MatXd guided_velocity(const CondVelocityFn& net, const MatXd& x, double t, double s,
                      const ConditionToken& c, const SamplerConfig& cfg);

/// Single-sample convenience overload.
VecXd guided_velocity(const CondVelocityFn& net, const VecXd& x, double t, double s,
                      const ConditionToken& c, const SamplerConfig& cfg);

/// DDIM update with eta-controlled stochasticity under the rectified
/// schedule. eta = 0 is the deterministic update (equivalent to the Euler
/// step), eta = 1 is ancestral sampling; t_next = 0 returns x0_hat exactly.
MatXd ddim_step(const MatXd& x_t, const MatXd& x0_hat, double t, double t_next, double eta,
                Rng& rng);
VecXd ddim_step(const VecXd& x_t, const VecXd& x0_hat, double t, double t_next, double eta,
                Rng& rng);

/// Full any-step sampling chain: draw x at t = 1 from the standard normal
/// prior and walk the inference grid; returns n rows at t = 0.
MatXd sample(const CondVelocityFn& net, const SamplerConfig& cfg, const ConditionToken& c,
             int n, int dim, Rng& rng);

}  // namespace selfe
