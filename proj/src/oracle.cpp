#include "oracle.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "objective.hpp"
#include "schedule.hpp"

namespace selfe::oracle {

namespace {

struct FlatComponent {
  double log_w;
  VecXd mean;
  double var;
};

// Components of the noisy marginal at level t for the given condition:
// N(alpha * mu, (alpha^2 * var + sigma^2) I), class-mixed by prior for phi.
std::vector<FlatComponent> noisy_components(const GmmCond& gmm, double t,
                                            const ConditionToken& c) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("oracle: t must lie in [0, 1]");
  auto [alpha, sigma] = alpha_sigma(t);
  std::vector<FlatComponent> comps;
  auto push_class = [&](int k, double log_prior) {
    const GmmClass& cl = gmm.classes[static_cast<size_t>(k)];
    for (size_t i = 0; i < cl.weights.size(); ++i) {
      comps.push_back(FlatComponent{log_prior + std::log(cl.weights[i]),
                                    alpha * cl.means.row(static_cast<Eigen::Index>(i)).transpose(),
                                    alpha * alpha * cl.vars[i] + sigma * sigma});
    }
  };
  if (c.is_class()) {
    if (c.id < 0 || c.id >= gmm.n_classes()) throw std::out_of_range("oracle: class id");
    push_class(c.id, 0.0);
  } else if (c.is_null()) {
    for (int k = 0; k < gmm.n_classes(); ++k) push_class(k, std::log(gmm.priors[static_cast<size_t>(k)]));
  } else {
    throw std::invalid_argument("oracle: fake conditions have no ground-truth density");
  }
  return comps;
}

}  // namespace

void GmmCond::validate() const {
  if (dim < 1) throw std::invalid_argument("GmmCond: dim must be positive");
  if (classes.empty()) throw std::invalid_argument("GmmCond: no classes");
  if (priors.size() != classes.size()) throw std::invalid_argument("GmmCond: prior count mismatch");
  double ps = std::accumulate(priors.begin(), priors.end(), 0.0);
  if (std::abs(ps - 1.0) > 1e-9) throw std::invalid_argument("GmmCond: priors must sum to 1");
  for (const auto& cl : classes) {
    if (cl.weights.empty() || cl.means.rows() != static_cast<Eigen::Index>(cl.weights.size()) ||
        cl.vars.size() != cl.weights.size() || cl.means.cols() != dim)
      throw std::invalid_argument("GmmCond: inconsistent class mixture");
    double ws = std::accumulate(cl.weights.begin(), cl.weights.end(), 0.0);
    if (std::abs(ws - 1.0) > 1e-9) throw std::invalid_argument("GmmCond: weights must sum to 1");
    for (double v : cl.vars)
      if (!(v > 0.0)) throw std::invalid_argument("GmmCond: variances must be positive");
  }
}

ScoreResult noisy_density(const GmmCond& gmm, const VecXd& x, double t, const ConditionToken& c) {
  auto comps = noisy_components(gmm, t, c);
  Eigen::Index d = x.size();
  const double log2pi = std::log(2.0 * M_PI);
  std::vector<double> logp(comps.size());
  double max_lp = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < comps.size(); ++i) {
    const auto& cm = comps[i];
    double q = (x - cm.mean).squaredNorm() / cm.var;
    logp[i] = cm.log_w - 0.5 * static_cast<double>(d) * (log2pi + std::log(cm.var)) - 0.5 * q;
    max_lp = std::max(max_lp, logp[i]);
  }
  double sum = 0.0;
  for (double lp : logp) sum += std::exp(lp - max_lp);
  double log_total = max_lp + std::log(sum);
  VecXd score = VecXd::Zero(d);
  for (size_t i = 0; i < comps.size(); ++i) {
    double resp = std::exp(logp[i] - log_total);
    score += resp * (comps[i].mean - x) / comps[i].var;
  }
  return ScoreResult{log_total, score};
}

VecXd posterior_mean(const GmmCond& gmm, const VecXd& x, double t, const ConditionToken& c) {
  auto [alpha, sigma] = alpha_sigma(t);
  if (alpha < 1e-6) throw std::domain_error("posterior_mean: ill-conditioned near t = 1");
  VecXd score = noisy_density(gmm, x, t, c).score;
  return (x + sigma * sigma * score) / alpha;
}

VecXd classifier_score(const GmmCond& gmm, const VecXd& x, double t, const ConditionToken& c) {
  if (!c.is_class()) throw std::invalid_argument("classifier_score: needs a class condition");
  VecXd s_null = noisy_density(gmm, x, t, ConditionToken::null()).score;
  VecXd s_cond = noisy_density(gmm, x, t, c).score;
  return s_null - s_cond;
}

MatXd sample_ground_truth(const GmmCond& gmm, Rng& rng, int n, const ConditionToken& c) {
  if (n < 1) throw std::invalid_argument("sample_ground_truth: n must be >= 1");
  MatXd out(n, gmm.dim);
  for (int i = 0; i < n; ++i) {
    int k;
    if (c.is_class()) {
      k = c.id;
    } else if (c.is_null()) {
      double u = rng.uniform(), acc = 0.0;
      k = gmm.n_classes() - 1;
      for (int j = 0; j < gmm.n_classes(); ++j) {
        acc += gmm.priors[static_cast<size_t>(j)];
        if (u < acc) { k = j; break; }
      }
    } else {
      throw std::invalid_argument("sample_ground_truth: fake conditions are not sampleable");
    }
    const GmmClass& cl = gmm.classes[static_cast<size_t>(k)];
    double u = rng.uniform(), acc = 0.0;
    size_t comp = cl.weights.size() - 1;
    for (size_t j = 0; j < cl.weights.size(); ++j) {
      acc += cl.weights[j];
      if (u < acc) { comp = j; break; }
    }
    double sd = std::sqrt(cl.vars[comp]);
    for (int dd = 0; dd < gmm.dim; ++dd)
      out(i, dd) = cl.means(static_cast<Eigen::Index>(comp), dd) + sd * rng.normal();
  }
  return out;
}

namespace {

// Relative error of an identity lhs == rhs. Both sides are differences of
// larger operands, so where the identity's value nearly vanishes (scores of
// a class and the marginal coincide away from class boundaries) the error is
// measured against the probe's operand magnitude instead of the tiny result.
double max_rel_error(const std::vector<VecXd>& lhs, const std::vector<VecXd>& rhs,
                     const std::vector<double>& opscale) {
  double worst = 0.0;
  for (size_t i = 0; i < lhs.size(); ++i) {
    double denom = std::max({rhs[i].norm(), 1e-6 * opscale[i], 1e-300});
    worst = std::max(worst, (lhs[i] - rhs[i]).norm() / denom);
  }
  return worst;
}

GFn posterior_view(const GmmCond& gmm) {
  return [&gmm](const VecXd& x, double s, const ConditionToken& tok) {
    return posterior_mean(gmm, x, s, tok);
  };
}

// Probe pipeline shared by both identity checks: noise a mixture draw to
// level t, denoise with the oracle, re-noise to level s.
struct Probe {
  VecXd x0_hat;
  VecXd x_hat_s;
  ConditionToken c;
};

std::vector<Probe> make_probes(const GmmCond& gmm, int n_probes, double t, double s, Rng& rng) {
  std::vector<Probe> probes;
  probes.reserve(static_cast<size_t>(n_probes));
  auto [alpha_t, sigma_t] = alpha_sigma(t);
  auto [alpha_s, sigma_s] = alpha_sigma(s);
  for (int p = 0; p < n_probes; ++p) {
    ConditionToken c = ConditionToken::cls(p % gmm.n_classes());
    VecXd x0 = sample_ground_truth(gmm, rng, 1, c).row(0).transpose();
    VecXd x_t = alpha_t * x0 + sigma_t * randn_vec<double>(rng, gmm.dim);
    VecXd x0_hat = posterior_mean(gmm, x_t, t, c);
    VecXd x_hat_s = alpha_s * x0_hat + sigma_s * randn_vec<double>(rng, gmm.dim);
    probes.push_back(Probe{x0_hat, x_hat_s, c});
  }
  return probes;
}

}  // namespace

double verify_result1(const GmmCond& gmm, int n_probes, double t, double s, Rng& rng) {
  gmm.validate();
  auto [alpha_s, sigma_s] = alpha_sigma(s);
  GFn g = posterior_view(gmm);
  std::vector<VecXd> lhs, rhs;
  std::vector<double> opscale;
  double pref = 2.0 * sigma_s * sigma_s / (alpha_s * alpha_s);
  for (const Probe& pr : make_probes(gmm, n_probes, t, s, rng)) {
    PseudoTarget pt = pseudo_target_from_noised(g, g, pr.x0_hat, pr.x_hat_s, s, pr.c);
    lhs.push_back((2.0 / alpha_s) * (pr.x0_hat - pt.x_self));
    VecXd sp = noisy_density(gmm, pr.x_hat_s, s, ConditionToken::null()).score;
    VecXd sc = noisy_density(gmm, pr.x_hat_s, s, pr.c).score;
    rhs.push_back(pref * (sp - sc));
    opscale.push_back((2.0 / alpha_s) * (g(pr.x_hat_s, s, ConditionToken::null()).norm() +
                                         g(pr.x_hat_s, s, pr.c).norm()) +
                      pref * (sp.norm() + sc.norm()));
  }
  return max_rel_error(lhs, rhs, opscale);
}

double verify_result2(const GmmCond& data, const GmmCond& model, int n_probes, double t,
                      double s, double k, Rng& rng) {
  data.validate();
  model.validate();
  auto [alpha_s, sigma_s] = alpha_sigma(s);
  GFn g_data = posterior_view(data);
  // The fake branch plays the model posterior mean: Fake(id) maps onto the
  // surrogate mixture's class id.
  GFn g_fake = [&model](const VecXd& x, double ss, const ConditionToken& tok) {
    return posterior_mean(model, x, ss, ConditionToken::cls(tok.id));
  };
  std::vector<VecXd> lhs, rhs;
  std::vector<double> opscale;
  double pref = 2.0 * sigma_s * sigma_s / (alpha_s * alpha_s);
  for (const Probe& pr : make_probes(data, n_probes, t, s, rng)) {
    PseudoTarget pt =
        pseudo_target_aux_from_noised(g_data, g_data, g_fake, pr.x0_hat, pr.x_hat_s, s, pr.c, k);
    lhs.push_back((2.0 / alpha_s) * (pr.x0_hat - pt.x_self));
    VecXd sp = noisy_density(data, pr.x_hat_s, s, ConditionToken::null()).score;
    VecXd sc = noisy_density(data, pr.x_hat_s, s, pr.c).score;
    VecXd sm = noisy_density(model, pr.x_hat_s, s, pr.c).score;
    rhs.push_back(pref * (k * (sp - sc) + (1.0 - k) * (sm - sc)));
    opscale.push_back((2.0 / alpha_s) * (g_data(pr.x_hat_s, s, ConditionToken::null()).norm() +
                                         g_data(pr.x_hat_s, s, pr.c).norm() +
                                         g_fake(pr.x_hat_s, s, ConditionToken::fake(pr.c.id)).norm()) +
                      pref * (sp.norm() + sc.norm() + sm.norm()));
  }
  return max_rel_error(lhs, rhs, opscale);
}

}  // namespace selfe::oracle
