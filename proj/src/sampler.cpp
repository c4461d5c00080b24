#include "sampler.hpp"

#include <cmath>
#include <stdexcept>

namespace selfe {

double s_for_interval(double t_k, double t_next, double rho) {
  if (!(t_next < t_k)) throw std::invalid_argument("s_for_interval: requires t_next < t_k");
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("s_for_interval: rho in [0, 1]");
  return t_next + rho * (t_k - t_next);
}

MatXd guided_velocity(const CondVelocityFn& net, const MatXd& x, double t, double s,
                      const ConditionToken& c, const SamplerConfig& cfg) {
  MatXd v_c = net(x, t, s, c);
  if (cfg.guidance == GuidanceMode::Off || cfg.omega == 1.0) return v_c;
  MatXd v_u = net(x, t, s, ConditionToken::null());
  MatXd v_g = v_c + (cfg.omega - 1.0) * (v_c - v_u);
  if (cfg.guidance == GuidanceMode::Standard) return v_g;
  // Energy-preserving: rescale the guided clean estimate to the conditional
  // estimate's norm, per sample, then convert back to velocity space.
  MatXd x0_c = x - t * v_c;
  MatXd x0_g = x - t * v_g;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double ng = x0_g.row(i).norm();
    if (ng < 1e-12) {
      x0_g.row(i) = x0_c.row(i);
    } else {
      x0_g.row(i) *= x0_c.row(i).norm() / ng;
    }
  }
  return (x - x0_g) / t;
}

VecXd guided_velocity(const CondVelocityFn& net, const VecXd& x, double t, double s,
                      const ConditionToken& c, const SamplerConfig& cfg) {
  return guided_velocity(net, MatXd(x.transpose()), t, s, c, cfg).row(0).transpose();
}

MatXd ddim_step(const MatXd& x_t, const MatXd& x0_hat, double t, double t_next, double eta,
                Rng& rng) {
  if (!(t_next < t)) throw std::invalid_argument("ddim_step: requires t_next < t");
  if (!(t_next >= 0.0 && t <= 1.0)) throw std::invalid_argument("ddim_step: times in [0, 1]");
  auto [a_t, s_t] = alpha_sigma(t);
  auto [a_n, s_n] = alpha_sigma(t_next);
  if (t_next == 0.0) return x0_hat;  // sigma_0 = 0: the chain terminates on x0_hat
  MatXd eps_hat = (x_t - a_t * x0_hat) / s_t;
  // snr ratio in the noise-injection budget; eta = 0 keeps it all on eps_hat.
  double snr_t = (a_t * a_t) / (s_t * s_t);
  double snr_n = (a_n * a_n) / (s_n * s_n);
  double sigma_tilde = eta * s_n * std::sqrt(std::max(0.0, 1.0 - snr_t / snr_n));
  double carry = std::sqrt(std::max(0.0, s_n * s_n - sigma_tilde * sigma_tilde));
  MatXd out = a_n * x0_hat + carry * eps_hat;
  if (sigma_tilde > 0.0) {
    out += sigma_tilde * randn_mat<double>(rng, x_t.rows(), x_t.cols());
  }
  return out;
}

VecXd ddim_step(const VecXd& x_t, const VecXd& x0_hat, double t, double t_next, double eta,
                Rng& rng) {
  return ddim_step(MatXd(x_t.transpose()), MatXd(x0_hat.transpose()), t, t_next, eta, rng)
      .row(0)
      .transpose();
}

MatXd sample(const CondVelocityFn& net, const SamplerConfig& cfg, const ConditionToken& c,
             int n, int dim, Rng& rng) {
  cfg.validate();
  if (n < 1 || dim < 1) throw std::invalid_argument("sample: n and dim must be positive");
  std::vector<double> grid = inference_grid(cfg.n_steps, cfg.mu);
  MatXd x = randn_mat<double>(rng, n, dim);
  for (size_t k = 0; k + 1 < grid.size(); ++k) {
    double t_k = grid[k], t_next = grid[k + 1];
    double s_k = s_for_interval(t_k, t_next, cfg.rho);
    MatXd v = guided_velocity(net, x, t_k, s_k, c, cfg);
    MatXd x0_hat = x - t_k * v;
    x = ddim_step(x, x0_hat, t_k, t_next, cfg.eta, rng);
  }
  return x;
}

}  // namespace selfe
