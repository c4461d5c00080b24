#pragma once

#include <vector>

#include "backbone.hpp"
#include "mat.hpp"
#include "rng.hpp"

namespace selfe::oracle {

/// One class-conditional isotropic Gaussian mixture.
struct GmmClass {
  std::vector<double> weights;  // sums to 1
  MatXd means;                  // components x dim
  std::vector<double> vars;     // per-component isotropic variance
};

/// Conditional mixture family: q(x0 | c) per class plus class priors.
/// The null condition mixes classes by their priors.
struct GmmCond {
  int dim = 2;
  std::vector<GmmClass> classes;
  std::vector<double> priors;

  int n_classes() const { return static_cast<int>(classes.size()); }
  void validate() const;
};

struct ScoreResult {
  double logp;
  VecXd score;
};

/// Log-density and score of the noisy marginal q(x_t | c) (or q(x_t | phi)
/// for the null condition) under the rectified schedule. Components become
/// N(alpha_t * mu_i, (alpha_t^2 * var_i + sigma_t^2) I); t = 1 degenerates
/// to the standard normal prior.
ScoreResult noisy_density(const GmmCond& gmm, const VecXd& x, double t, const ConditionToken& c);

/// Tweedie posterior mean (x + sigma_t^2 * score) / alpha_t.
VecXd posterior_mean(const GmmCond& gmm, const VecXd& x, double t, const ConditionToken& c);

/// Classifier score grad log q(x|phi) - grad log q(x|c), exact.
VecXd classifier_score(const GmmCond& gmm, const VecXd& x, double t, const ConditionToken& c);

/// Exact ancestral samples (component draw, then Gaussian draw). The null
/// condition first draws a class by prior.
MatXd sample_ground_truth(const GmmCond& gmm, Rng& rng, int n, const ConditionToken& c);

/// Max relative error of the Result-1 identity over probe points: the
/// self-evaluation gradient with oracle posterior means substituted for G
/// vs (2 sigma_s^2 / alpha_s^2) * classifier score. Probes are generated by
/// noising mixture draws to level t, denoising with the oracle, and
/// re-noising to level s.
double verify_result1(const GmmCond& gmm, int n_probes, double t, double s, Rng& rng);

/// Same check with the k-mixed target of Result 2, using a second mixture
/// as the stand-in for the model distribution.
double verify_result2(const GmmCond& data, const GmmCond& model, int n_probes, double t,
                      double s, double k, Rng& rng);

}  // namespace selfe::oracle
