#include <doctest.h>

#include <cmath>

#include "datasets.hpp"
#include "objective.hpp"
#include "oracle.hpp"
#include "schedule.hpp"

using namespace selfe;
using namespace selfe::oracle;

namespace {

GmmCond single_standard_normal() {
  GmmCond g;
  g.dim = 1;
  GmmClass cl;
  cl.weights = {1.0};
  cl.means = MatXd::Zero(1, 1);
  cl.vars = {1.0};
  g.classes = {cl};
  g.priors = {1.0};
  return g;
}

GmmCond symmetric_pair(double mu) {
  GmmCond g;
  g.dim = 1;
  for (int c = 0; c < 2; ++c) {
    GmmClass cl;
    cl.weights = {1.0};
    cl.means = MatXd::Constant(1, 1, c == 0 ? -mu : mu);
    cl.vars = {0.25};
    g.classes.push_back(cl);
  }
  g.priors = {0.5, 0.5};
  return g;
}

GmmCond random_mixture(Rng& rng, int classes = 3, int comps = 3) {
  GmmCond g;
  g.dim = 2;
  double prior_sum = 0;
  std::vector<double> priors;
  for (int c = 0; c < classes; ++c) {
    GmmClass cl;
    double wsum = 0;
    std::vector<double> ws;
    for (int i = 0; i < comps; ++i) {
      ws.push_back(rng.uniform(0.2, 1.0));
      wsum += ws.back();
    }
    for (double& w : ws) w /= wsum;
    cl.weights = ws;
    cl.means = randn_mat<double>(rng, comps, 2) * 1.5;
    for (int i = 0; i < comps; ++i) cl.vars.push_back(rng.uniform(0.05, 0.5));
    g.classes.push_back(cl);
    priors.push_back(rng.uniform(0.2, 1.0));
    prior_sum += priors.back();
  }
  for (double& p : priors) p /= prior_sum;
  g.priors = priors;
  return g;
}

}  // namespace

TEST_CASE("single standard normal: score is -x / (alpha^2 + sigma^2)") {
  GmmCond g = single_standard_normal();
  Rng rng(1);
  for (double t : {0.0, 0.25, 0.5, 0.9, 1.0}) {
    auto [a, s] = alpha_sigma(t);
    double var = a * a + s * s;
    for (int i = 0; i < 10; ++i) {
      VecXd x = randn_vec<double>(rng, 1) * 2.0;
      auto r = noisy_density(g, x, t, ConditionToken::cls(0));
      CHECK(r.score(0) == doctest::Approx(-x(0) / var).epsilon(1e-12));
    }
  }
}

TEST_CASE("t = 1 degenerates to the standard normal prior") {
  Rng rng(2);
  GmmCond g = random_mixture(rng);
  VecXd x = randn_vec<double>(rng, 2);
  auto r = noisy_density(g, x, 1.0, ConditionToken::null());
  double want_logp = -std::log(2.0 * M_PI) - 0.5 * x.squaredNorm();
  CHECK(r.logp == doctest::Approx(want_logp).epsilon(1e-12));
  CHECK((r.score + x).norm() < 1e-12);
}

TEST_CASE("symmetric two-component mixture has zero score at the origin") {
  GmmCond g = symmetric_pair(1.5);
  VecXd x = VecXd::Zero(1);
  auto r = noisy_density(g, x, 0.3, ConditionToken::null());
  CHECK(std::abs(r.score(0)) < 1e-12);
}

TEST_CASE("analytic score matches finite differences of the log-density") {
  Rng rng(3);
  GmmCond g = random_mixture(rng);
  const double h = 1e-6;
  for (int trial = 0; trial < 40; ++trial) {
    double t = rng.uniform(0.02, 0.98);
    VecXd x = randn_vec<double>(rng, 2) * 2.0;
    ConditionToken c = trial % 2 ? ConditionToken::null() : ConditionToken::cls(trial % 3);
    auto r = noisy_density(g, x, t, c);
    for (int d = 0; d < 2; ++d) {
      VecXd xp = x, xm = x;
      xp(d) += h;
      xm(d) -= h;
      double fd =
          (noisy_density(g, xp, t, c).logp - noisy_density(g, xm, t, c).logp) / (2 * h);
      CHECK(std::abs(fd - r.score(d)) / std::max(1.0, std::abs(fd)) < 1e-6);
    }
  }
}

TEST_CASE("posterior mean: Gaussian case and the Tweedie round-trip") {
  // prior N(0,1), alpha = sigma = 0.5 -> E[x0 | x_t] = x_t
  GmmCond g = single_standard_normal();
  VecXd x = VecXd::Constant(1, 0.73);
  VecXd m = posterior_mean(g, x, 0.5, ConditionToken::cls(0));
  CHECK(m(0) == doctest::Approx(0.73).epsilon(1e-12));

  Rng rng(4);
  GmmCond gm = random_mixture(rng);
  for (int i = 0; i < 50; ++i) {
    double t = rng.uniform(0.05, 0.95);
    auto [a, s] = alpha_sigma(t);
    VecXd xp = randn_vec<double>(rng, 2) * 2.0;
    ConditionToken c = ConditionToken::cls(i % 3);
    VecXd score = noisy_density(gm, xp, t, c).score;
    VecXd mean = posterior_mean(gm, xp, t, c);
    VecXd score_back = (a * mean - xp) / (s * s);
    CHECK((score_back - score).norm() / std::max(1e-9, score.norm()) < 1e-10);
  }
  CHECK_THROWS_AS(posterior_mean(gm, VecXd::Zero(2), 1.0, ConditionToken::cls(0)),
                  std::domain_error);
}

TEST_CASE("posterior mean agrees with an importance-sampling estimate") {
  Rng rng(5);
  GmmCond g = random_mixture(rng, 2, 2);
  double t = 0.45;
  auto [a, s] = alpha_sigma(t);
  ConditionToken c = ConditionToken::cls(1);
  VecXd x_t = VecXd::Zero(2);
  x_t << 0.4, -0.3;
  VecXd want = posterior_mean(g, x_t, t, c);

  // draw x0 from the class mixture, weight by N(x_t; a x0, s^2 I)
  const int n = 1000000;
  MatXd draws = sample_ground_truth(g, rng, n, c);
  double wsum = 0;
  VecXd acc = VecXd::Zero(2);
  std::vector<double> wts(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double q = (x_t - a * draws.row(i).transpose()).squaredNorm() / (s * s);
    double w = std::exp(-0.5 * q);
    wts[static_cast<size_t>(i)] = w;
    wsum += w;
    acc += w * draws.row(i).transpose();
  }
  VecXd mc = acc / wsum;
  // effective sample size for the standard error
  double w2sum = 0;
  for (double w : wts) w2sum += w * w;
  double ess = wsum * wsum / w2sum;
  double se = std::sqrt(g.classes[1].vars[0] / ess) * 3.0 + 3e-3;
  CHECK((mc - want).norm() < 3 * se);
}

TEST_CASE("classifier score: degenerate and symmetric cases, FD oracle") {
  // single class: phi == c, so the difference vanishes
  GmmCond g1 = single_standard_normal();
  VecXd x = VecXd::Constant(1, 0.9);
  CHECK(classifier_score(g1, x, 0.4, ConditionToken::cls(0)).norm() < 1e-14);

  // symmetric classes at +-mu: unconditional score is 0 at x = 0, so the
  // classifier score equals minus the conditional score there
  GmmCond g2 = symmetric_pair(1.2);
  VecXd zero = VecXd::Zero(1);
  VecXd cs = classifier_score(g2, zero, 0.3, ConditionToken::cls(1));
  VecXd cond = noisy_density(g2, zero, 0.3, ConditionToken::cls(1)).score;
  CHECK((cs + cond).norm() < 1e-12);

  // FD oracle on log q(x|phi) - log q(x|c)
  Rng rng(6);
  GmmCond g3 = random_mixture(rng);
  const double h = 1e-6;
  for (int i = 0; i < 30; ++i) {
    double t = rng.uniform(0.05, 0.95);
    VecXd xp = randn_vec<double>(rng, 2) * 1.5;
    ConditionToken c = ConditionToken::cls(i % 3);
    VecXd got = classifier_score(g3, xp, t, c);
    for (int d = 0; d < 2; ++d) {
      VecXd a = xp, b = xp;
      a(d) += h;
      b(d) -= h;
      auto diff = [&](const VecXd& v) {
        return noisy_density(g3, v, t, ConditionToken::null()).logp -
               noisy_density(g3, v, t, c).logp;
      };
      double fd = (diff(a) - diff(b)) / (2 * h);
      CHECK(std::abs(fd - got(d)) / std::max(1.0, std::abs(fd)) < 1e-6);
    }
  }
}

TEST_CASE("ground-truth sampler: moments, class purity, determinism") {
  Rng rng(7);
  GmmCond g = make_preset("gmm-4class");
  const int n = 200000;
  MatXd pts = sample_ground_truth(g, rng, n, ConditionToken::cls(0));
  VecXd mean = pts.colwise().mean().transpose();
  VecXd want = 0.5 * (g.classes[0].means.row(0) + g.classes[0].means.row(1)).transpose();
  CHECK((mean - want).norm() < 4.0 * std::sqrt(2.0 / n) * 2.0);

  // class-conditional draws stay near their own components
  for (int i = 0; i < 1000; ++i) {
    double d0 = (pts.row(i).transpose() - g.classes[0].means.row(0).transpose()).norm();
    double d1 = (pts.row(i).transpose() - g.classes[0].means.row(1).transpose()).norm();
    CHECK(std::min(d0, d1) < 6 * 0.25);  // within 6 sd of an own component
  }

  Rng r1(8), r2(8);
  MatXd a = sample_ground_truth(g, r1, 64, ConditionToken::null());
  MatXd b = sample_ground_truth(g, r2, 64, ConditionToken::null());
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("result 1 identity and its perturbation control") {
  Rng rng(9);
  GmmCond g = symmetric_pair(1.5);
  Rng r1(10);
  CHECK(verify_result1(g, 64, 0.9, 0.5, r1) < 1e-6);
  Rng r2(10);
  CHECK(verify_result1(g, 64, 0.5, 0.1, r2) < 1e-6);

  // single-class dataset: both sides vanish, the check still passes
  GmmCond g1 = single_standard_normal();
  Rng r3(11);
  CHECK(verify_result1(g1, 16, 0.5, 0.2, r3) < 1e-6);

  // a deliberately biased conditional mean must break the identity
  GFn g_cond = [&](const VecXd& x, double s, const ConditionToken& tok) {
    VecXd m = posterior_mean(g, x, s, tok);
    m.array() += 0.1;
    return m;
  };
  GFn g_uncond = [&](const VecXd& x, double s, const ConditionToken& tok) {
    return posterior_mean(g, x, s, tok);
  };
  double s = 0.5;
  auto [as, ss] = alpha_sigma(s);
  Rng r4(12);
  double worst = 0;
  for (int i = 0; i < 16; ++i) {
    VecXd x0 = sample_ground_truth(g, r4, 1, ConditionToken::cls(0)).row(0).transpose();
    VecXd xhs = as * x0 + ss * randn_vec<double>(r4, 1);
    auto pt = pseudo_target_from_noised(g_cond, g_uncond, x0, xhs, s, ConditionToken::cls(0));
    VecXd lhs = (2.0 / as) * (x0 - pt.x_self);
    VecXd rhs = (2.0 * ss * ss / (as * as)) * classifier_score(g, xhs, s, ConditionToken::cls(0));
    worst = std::max(worst, (lhs - rhs).norm() / std::max(rhs.norm(), 1e-3));
  }
  CHECK(worst > 1e-2);
}

TEST_CASE("result 2: k = 1 reduction and matched-model degeneration") {
  Rng rng(13);
  GmmCond data = random_mixture(rng);
  GmmCond model = random_mixture(rng);

  Rng ra(14), rb(14);
  double full = verify_result2(data, model, 64, 0.9, 0.5, 0.9, ra);
  CHECK(full < 1e-6);
  CHECK(verify_result2(data, model, 64, 0.5, 0.1, 0.0, rb) < 1e-6);

  // p_theta == data: the auxiliary term contributes nothing and the mixed
  // delta collapses to k times the classifier delta
  GFn gd = [&](const VecXd& x, double s, const ConditionToken& tok) {
    return posterior_mean(data, x, s, tok);
  };
  GFn gf = [&](const VecXd& x, double s, const ConditionToken& tok) {
    return posterior_mean(data, x, s, ConditionToken::cls(tok.id));
  };
  Rng rc(15);
  VecXd x0 = randn_vec<double>(rc, 2);
  VecXd xhs = randn_vec<double>(rc, 2);
  double k = 0.3;
  auto a = pseudo_target_aux_from_noised(gd, gd, gf, x0, xhs, 0.4, ConditionToken::cls(1), k);
  auto b = pseudo_target_from_noised(gd, gd, x0, xhs, 0.4, ConditionToken::cls(1));
  VecXd delta_aux = x0 - a.x_self;
  VecXd delta_cls = x0 - b.x_self;
  CHECK((delta_aux - k * delta_cls).norm() < 1e-12);
}

TEST_CASE("presets resolve to valid mixtures") {
  for (const char* name : {"gmm-4class", "checkerboard", "two-spirals"}) {
    GmmCond g = make_preset(name);
    CHECK_NOTHROW(g.validate());
    CHECK(g.dim == 2);
  }
  CHECK(make_preset("gmm-4class").n_classes() == 4);
  CHECK(make_preset("checkerboard").n_classes() == 2);
  CHECK(make_preset("two-spirals").n_classes() == 2);
  CHECK_THROWS_AS(make_preset("nope"), std::invalid_argument);
}

TEST_CASE("fake conditions have no oracle semantics") {
  GmmCond g = symmetric_pair(1.0);
  Rng rng(16);
  CHECK_THROWS_AS(noisy_density(g, VecXd::Zero(1), 0.5, ConditionToken::fake(0)),
                  std::invalid_argument);
  CHECK_THROWS_AS(sample_ground_truth(g, rng, 4, ConditionToken::fake(0)),
                  std::invalid_argument);
}
