#include "verify.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "datasets.hpp"
#include "evalsuite.hpp"
#include "objective.hpp"
#include "oracle.hpp"
#include "sampler.hpp"
#include "schedule.hpp"
#include "trainer.hpp"

namespace selfe::verify {

namespace {

// Two-class 1-D mixture used by the identity checks.
oracle::GmmCond mixture_1d() {
  oracle::GmmCond g;
  g.dim = 1;
  for (int c = 0; c < 2; ++c) {
    oracle::GmmClass cl;
    cl.weights = {0.6, 0.4};
    cl.means.resize(2, 1);
    cl.means(0, 0) = c == 0 ? -1.5 : 1.0;
    cl.means(1, 0) = c == 0 ? -0.5 : 2.2;
    cl.vars = {0.09, 0.16};
    g.classes.push_back(cl);
  }
  g.priors = {0.55, 0.45};
  return g;
}

oracle::GmmCond mixture_2d(Rng& rng, double shift = 0.0) {
  oracle::GmmCond g;
  g.dim = 2;
  for (int c = 0; c < 3; ++c) {
    oracle::GmmClass cl;
    cl.weights = {0.5, 0.3, 0.2};
    cl.means = randn_mat<double>(rng, 3, 2) * 1.5;
    cl.means.array() += shift;
    cl.vars = {0.2, 0.35, 0.1};
    g.classes.push_back(cl);
  }
  g.priors = {0.4, 0.35, 0.25};
  return g;
}

// Small double-precision network with a randomized head (the zero-init head
// would make most parameter gradients vanish at first order).
Network<double> small_net(Rng& rng, int classes = 4) {
  NetworkConfig cfg;
  cfg.dim = 2;
  cfg.hidden = 32;
  cfg.depth = 3;
  cfg.classes = classes;
  cfg.cond_emb = 16;
  cfg.time_feats = 32;
  Network<double> net = Network<double>::init(cfg, rng);
  net.params[static_cast<size_t>(net.out_w())] = randn_mat<double>(rng, cfg.hidden, cfg.dim) * 0.3;
  net.params[static_cast<size_t>(net.out_b())] = randn_mat<double>(rng, 1, cfg.dim) * 0.1;
  return net;
}

// Central finite differences of the full objective against the analytic
// gradients, with stop-gradient views frozen at the base parameters.
double grad_check(Rng rng, bool aux_active, bool renorm, bool ema_split) {
  Network<double> net = small_net(rng);
  Network<double> ema_view = small_net(rng);
  Network<double> frozen = net;

  ObjectiveConfig ocfg;
  ocfg.renorm_enabled = renorm;
  ocfg.ema_split = ema_split;
  ScheduleSpec sched;
  sched.tau_anneal_iters = 100;
  oracle::GmmCond data = make_preset("gmm-4class");
  Rng brng = rng.child(77);
  TrainingBatch<double> batch =
      make_training_batch<double>(data, sched, ocfg, /*iter=*/1000, /*batch=*/12, false, brng);

  NetViews<double> views{&net, &ema_view, &frozen};
  std::vector<Mat<double>> grads;
  total_loss_and_grad(batch, views, ocfg, sched, aux_active, false, &grads);

  double gmax = 0;
  for (const auto& g : grads) gmax = std::max(gmax, g.cwiseAbs().maxCoeff());
  const double h = 1e-4;
  double worst = 0;
  for (size_t slot = 0; slot < net.params.size(); ++slot) {
    Mat<double>& p = net.params[slot];
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.cols(); ++c) {
        double keep = p(r, c);
        p(r, c) = keep + h;
        double lp = total_loss(batch, views, ocfg, sched, aux_active);
        p(r, c) = keep - h;
        double lm = total_loss(batch, views, ocfg, sched, aux_active);
        p(r, c) = keep;
        double fd = (lp - lm) / (2 * h);
        double an = grads[slot](r, c);
        double denom = std::max({std::abs(fd), std::abs(an), 1e-6 * gmax});
        worst = std::max(worst, std::abs(fd - an) / denom);
      }
    }
  }
  return worst;
}

}  // namespace

std::vector<PropertyResult> run_all(std::uint64_t seed) {
  std::vector<PropertyResult> out;
  Rng root(seed);
  auto add = [&](const std::string& name, double measured, double threshold) {
    out.push_back(PropertyResult{name, measured, threshold, measured <= threshold});
  };

  {  // alpha + sigma = 1, both in [0, 1]
    Rng rng = root.child(1);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
      double t = rng.uniform();
      auto [a, s] = alpha_sigma(t);
      worst = std::max(worst, std::abs(a + s - 1.0));
      if (a < 0 || a > 1 || s < 0 || s > 1) worst = 1;
    }
    add("schedule.alpha_sigma_identity", worst, 1e-15);
  }
  {  // warp(x, 0) = x to machine precision; strict monotonicity
    Rng rng = root.child(2);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
      double x = rng.uniform(1e-6, 1.0 - 1e-6);
      worst = std::max(worst, std::abs(warp(x, 0.0) - x));
    }
    add("schedule.warp_identity", worst, 1e-15);
    int violations = 0;
    for (double mu : {0.0, 0.5, 1.15}) {
      double prev = 0.0;
      for (int i = 1; i < 2000; ++i) {
        double w = warp(i / 2000.0, mu);
        if (w <= prev) ++violations;
        prev = w;
      }
    }
    add("schedule.warp_monotone", violations, 0);
  }
  {  // sampled s never exceeds t across annealing stages
    Rng rng = root.child(3);
    ScheduleSpec spec;
    spec.tau_anneal_iters = 500;
    int violations = 0;
    for (int i = 0; i < 1000000; ++i) {
      double t = sample_t(rng, spec);
      double s = sample_s(rng, t, i % 2000, spec);
      if (s > t || t < spec.t_min || t > 1.0) ++violations;
    }
    add("schedule.sample_s_bound", violations, 0);
  }
  {  // grid endpoints pinned, strictly decreasing
    int violations = 0;
    for (int n : {1, 2, 5, 32}) {
      for (double mu : {0.0, 0.5}) {
        auto g = inference_grid(n, mu);
        if (g.front() != 1.0 || g.back() != 0.0) ++violations;
        for (size_t i = 0; i + 1 < g.size(); ++i)
          if (g[i + 1] >= g[i]) ++violations;
      }
    }
    add("schedule.grid_contract", violations, 0);
  }
  {  // G-parametrization: predict_x0 equals x_t - t * V for random probes
    Rng rng = root.child(4);
    Network<double> net = small_net(rng);
    double worst = 0;
    for (int i = 0; i < 64; ++i) {
      Vec<double> x = randn_vec<double>(rng, 2);
      double t = rng.uniform(0.05, 0.99);
      double s = rng.uniform(0.0, t);
      ConditionToken c = ConditionToken::cls(i % 4);
      Vec<double> v = net.predict_velocity(x, t, s, c);
      Vec<double> x0 = net.predict_x0_point(x, t, s, c);
      worst = std::max(worst, (x0 - (x - t * v)).template lpNorm<Eigen::Infinity>());
    }
    add("backbone.g_parametrization", worst, 1e-14);
  }
  {  // tape forward reproduces the plain forward
    Rng rng = root.child(5);
    Network<double> net = small_net(rng);
    MatXd x = randn_mat<double>(rng, 7, 2);
    VecXd t(7), s(7);
    std::vector<int> rows;
    for (int i = 0; i < 7; ++i) {
      t(i) = rng.uniform(0.05, 1.0);
      s(i) = rng.uniform(0.0, t(i));
      rows.push_back(ConditionToken::cls(i % 4).row(4));
    }
    Mat<double> ve = net.velocity(x, t, s, rows);
    ad::Tape<double> tape;
    TapeNet<double> tn = TapeNet<double>::bind(tape, net);
    Mat<double> vt = tape.value(tn.velocity(tape, x, t, s, rows));
    add("backbone.tape_matches_eval", (ve - vt).cwiseAbs().maxCoeff(), 1e-12);
  }
  {  // lambda edge cases
    Rng rng = root.child(6);
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
      double t = rng.uniform(0.01, 0.999);
      worst = std::max(worst, std::abs(lambda_weight(t, t, 20.0)));
    }
    worst = std::max(worst, std::abs(lambda_weight(0.0, 0.5, 20.0) - 1.0));
    worst = std::max(worst, std::abs(lambda_weight(0.25, 0.5, 20.0) - (1.0 - 1.0 / 3.0)));
    worst = std::max(worst, std::abs(lambda_weight(0.1, 0.999999999, 20.0) - 20.0));
    add("objective.lambda_edges", worst, 1e-12);
  }
  {  // renormalized target preserves the clean sample's norm
    Rng rng = root.child(7);
    double worst = 0;
    for (int i = 0; i < 10000; ++i) {
      Vec<double> x0 = randn_vec<double>(rng, 2) * 2.0;
      Vec<double> xs = randn_vec<double>(rng, 2) * 2.0;
      double lam = rng.uniform(0.0, 20.0);
      if ((x0 + lam * xs).norm() < 1e-6) continue;
      Vec<double> r = renorm_target(x0, xs, lam);
      double rel = std::abs(r.norm() - x0.norm()) / std::max(x0.norm(), 1e-12);
      worst = std::max(worst, rel);
    }
    add("objective.renorm_norm_preserved", worst, 1e-6);
  }
  {  // lambda = 0 collapses the pair loss to the data loss exactly
    Rng rng = root.child(8);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
      Vec<double> xh = randn_vec<double>(rng, 2), x0 = randn_vec<double>(rng, 2),
                  xs = randn_vec<double>(rng, 2);
      double dl = data_loss(xh, x0);
      worst = std::max(worst, std::abs(pair_loss(xh, x0, xs, 0.0, true) - dl));
      worst = std::max(worst, std::abs(pair_loss(xh, x0, xs, 0.0, false) - dl));
    }
    add("objective.pair_loss_lambda0", worst, 0.0);
  }
  {  // Tweedie round-trip on random mixtures
    Rng rng = root.child(9);
    oracle::GmmCond g = mixture_2d(rng);
    double worst = 0;
    for (int i = 0; i < 200; ++i) {
      double t = rng.uniform(0.05, 0.95);
      auto [alpha, sigma] = alpha_sigma(t);
      VecXd x = randn_vec<double>(rng, 2) * 2.0;
      ConditionToken c = ConditionToken::cls(i % 3);
      VecXd score = oracle::noisy_density(g, x, t, c).score;
      VecXd mean = oracle::posterior_mean(g, x, t, c);
      VecXd score_back = (alpha * mean - x) / (sigma * sigma);
      VecXd mean_back = (x + sigma * sigma * score) / alpha;
      worst = std::max(worst, (score_back - score).norm() / std::max(score.norm(), 1e-9));
      worst = std::max(worst, (mean_back - mean).norm() / std::max(mean.norm(), 1e-9));
    }
    add("oracle.tweedie_roundtrip", worst, 1e-10);
  }
  {  // phi score equals the posterior-responsibility mixture of class scores
    Rng rng = root.child(10);
    oracle::GmmCond g = mixture_2d(rng);
    double worst = 0;
    for (int i = 0; i < 200; ++i) {
      double t = rng.uniform(0.02, 0.98);
      VecXd x = randn_vec<double>(rng, 2) * 2.5;
      auto marg = oracle::noisy_density(g, x, t, ConditionToken::null());
      VecXd mix = VecXd::Zero(2);
      for (int c = 0; c < g.n_classes(); ++c) {
        auto cls = oracle::noisy_density(g, x, t, ConditionToken::cls(c));
        double resp = std::exp(std::log(g.priors[static_cast<size_t>(c)]) + cls.logp - marg.logp);
        mix += resp * cls.score;
      }
      worst = std::max(worst, (mix - marg.score).norm() / std::max(marg.score.norm(), 1e-6));
    }
    add("oracle.phi_score_total_probability", worst, 1e-8);
  }
  {  // Result 1 identity across the (t, s) grid, 1-D and 2-D
    Rng rng = root.child(11);
    oracle::GmmCond g1 = mixture_1d();
    oracle::GmmCond g2 = mixture_2d(rng);
    double worst = 0;
    for (double t : {0.9, 0.5}) {
      for (double s : {0.5, 0.1}) {
        if (s > t) continue;
        Rng r1 = rng.child(static_cast<std::uint64_t>(t * 100 + s * 10));
        worst = std::max(worst, oracle::verify_result1(g1, 64, t, s, r1));
        worst = std::max(worst, oracle::verify_result1(g2, 64, t, s, r1));
      }
    }
    add("oracle.result1_classifier_gradient", worst, 1e-6);
  }
  {  // Result 2 identity with a surrogate model mixture, k in {0, 0.9, 1}
    Rng rng = root.child(12);
    oracle::GmmCond data = mixture_2d(rng);
    oracle::GmmCond model = mixture_2d(rng, 0.4);
    double worst = 0;
    for (double k : {0.0, 0.9, 1.0}) {
      Rng r1 = rng.child(static_cast<std::uint64_t>(k * 10));
      worst = std::max(worst, oracle::verify_result2(data, model, 64, 0.9, 0.5, k, r1));
      worst = std::max(worst, oracle::verify_result2(data, model, 64, 0.5, 0.1, k, r1));
    }
    add("oracle.result2_aux_gradient", worst, 1e-6);
  }
  {  // analytic vs central-difference gradients, both stages and both
     // renormalization settings
    add("trainer.gradcheck_classifier_stage", grad_check(root.child(13), false, true, true), 1e-4);
    add("trainer.gradcheck_aux_stage", grad_check(root.child(14), true, true, true), 1e-4);
    add("trainer.gradcheck_no_renorm", grad_check(root.child(15), false, false, false), 1e-4);
  }
  {  // stop-gradient boundaries: detached passes contribute exactly zero
    Rng rng = root.child(16);
    ad::Tape<double> tape;
    auto p = tape.leaf(randn_mat<double>(rng, 3, 3));
    auto q = tape.leaf(randn_mat<double>(rng, 3, 3));
    auto loss = tape.sum(tape.cmul(tape.detach(p), q));
    tape.backward(loss);
    double worst = tape.grad(p).cwiseAbs().maxCoeff();
    // EMA parameters never become leaves: gradients for them cannot exist.
    Network<double> net = small_net(rng);
    Network<double> ema = small_net(rng);
    ObjectiveConfig ocfg;
    ScheduleSpec sched;
    Rng brng = rng.child(3);
    auto batch = make_training_batch<double>(make_preset("gmm-4class"), sched, ocfg, 1000, 8,
                                             false, brng);
    NetViews<double> views{&net, &ema, nullptr};
    std::vector<Mat<double>> grads;
    total_loss_and_grad(batch, views, ocfg, sched, true, false, &grads);
    if (grads.size() != net.params.size()) worst = 1.0;
    add("trainer.stop_gradient_structure", worst, 0.0);
  }
  {  // baseline objective equals the one-line CFM velocity loss
    Rng rng = root.child(17);
    Network<double> net = small_net(rng);
    ObjectiveConfig ocfg;
    ScheduleSpec sched;
    Rng brng = rng.child(5);
    auto batch = make_training_batch<double>(make_preset("gmm-4class"), sched, ocfg, 0, 64, true,
                                             brng);
    NetViews<double> views{&net, &net, nullptr};
    double got = total_loss(batch, views, ocfg, sched, false, true);
    // independent oracle: mean ||V - (eps - x0)||^2 over the batch
    double want = 0;
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
      auto pr = batch.pair(i);
      Vec<double> v = net.predict_velocity(pr.x_t, pr.ts.t, pr.ts.s, pr.c);
      want += (v - (pr.eps - pr.x0)).squaredNorm();
    }
    want /= static_cast<double>(batch.size());
    add("trainer.baseline_equals_cfm", std::abs(got - want) / std::max(std::abs(want), 1e-12), 1e-10);
  }
  {  // adam oracle: first bias-corrected step; zero gradients from rest
    std::vector<Mat<double>> params{Mat<double>::Constant(1, 1, 0.7)};
    std::vector<Mat<double>> grads{Mat<double>::Constant(1, 1, 0.3)};
    auto st = OptimizerState<double>::like(params);
    adam_step(st, params, grads, 1e-2);
    // first step: m_hat = g, v_hat = g^2, update = -lr * g / (|g| + eps)
    double want = 0.7 - 1e-2 * 0.3 / (0.3 + 1e-8);
    double worst = std::abs(params[0](0, 0) - want);
    std::vector<Mat<double>> fresh{Mat<double>::Constant(1, 1, 0.7)};
    std::vector<Mat<double>> zero{Mat<double>::Zero(1, 1)};
    auto st2 = OptimizerState<double>::like(fresh);
    adam_step(st2, fresh, zero, 1e-2);
    worst = std::max(worst, std::abs(fresh[0](0, 0) - 0.7));
    add("trainer.adam_first_step_oracle", worst, 1e-12);
  }
  {  // ema update arithmetic
    Rng rng = root.child(18);
    Network<double> net = small_net(rng);
    EmaShadow<double> sh = EmaShadow<double>::from(net, 1.0);
    Network<double> moved = net;
    moved.params[1].array() += 1.0;
    sh.update(moved);
    double worst = (sh.net.params[1] - net.params[1]).cwiseAbs().maxCoeff();  // decay 1: frozen
    sh.decay = 0.0;
    sh.update(moved);
    worst = std::max(worst, (sh.net.params[1] - moved.params[1]).cwiseAbs().maxCoeff());
    sh.decay = 0.5;
    Network<double> back = net;
    sh.update(back);
    Mat<double> want = 0.5 * moved.params[1] + 0.5 * net.params[1];
    worst = std::max(worst, (sh.net.params[1] - want).cwiseAbs().maxCoeff());
    add("backbone.ema_update_arithmetic", worst, 1e-12);
  }
  {  // eta = 0 DDIM step is the Euler step; terminal step returns x0_hat
    Rng rng = root.child(19);
    Rng dummy(0);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
      VecXd x = randn_vec<double>(rng, 2) * 2.0;
      VecXd v = randn_vec<double>(rng, 2) * 2.0;
      double t = rng.uniform(0.05, 1.0);
      double tn = rng.uniform(0.0, t * 0.999);
      VecXd x0 = x - t * v;
      VecXd got = ddim_step(x, x0, t, tn, 0.0, dummy);
      VecXd want = x - (t - tn) * v;
      worst = std::max(worst, (got - want).norm() / std::max(want.norm(), 1e-9));
      VecXd terminal = ddim_step(x, x0, t, 0.0, 1.0, dummy);
      worst = std::max(worst, (terminal - x0).norm());
    }
    add("sampler.ddim_eta0_euler_identity", worst, 1e-10);
  }
  {  // injected-noise variance budget: carry^2 + sigma_tilde^2 = sigma_next^2
    Rng rng = root.child(20);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
      double t = rng.uniform(0.1, 1.0);
      double tn = rng.uniform(0.001, t * 0.99);
      double eta = rng.uniform();
      auto [a_t, s_t] = alpha_sigma(t);
      auto [a_n, s_n] = alpha_sigma(tn);
      double snr_t = a_t * a_t / (s_t * s_t), snr_n = a_n * a_n / (s_n * s_n);
      double sig = eta * s_n * std::sqrt(std::max(0.0, 1.0 - snr_t / snr_n));
      double carry2 = std::max(0.0, s_n * s_n - sig * sig);
      worst = std::max(worst, std::abs(carry2 + sig * sig - s_n * s_n));
    }
    add("sampler.variance_budget", worst, 1e-12);
  }
  {  // guidance: omega = 1 collapse, affine slope, energy preservation
    Rng rng = root.child(21);
    Network<double> net = small_net(rng);
    net.params[static_cast<size_t>(net.out_w())] = randn_mat<double>(rng, 32, 2) * 0.4;
    CondVelocityFn fn = make_velocity_fn(net);
    double worst_affine = 0, worst_ep = 0;
    for (int i = 0; i < 32; ++i) {
      MatXd x = randn_mat<double>(rng, 3, 2);
      double t = rng.uniform(0.2, 1.0), s = rng.uniform(0.0, t);
      ConditionToken c = ConditionToken::cls(i % 4);
      SamplerConfig cfg;
      cfg.guidance = GuidanceMode::Standard;
      cfg.omega = 1.0;
      MatXd v1 = guided_velocity(fn, x, t, s, c, cfg);
      MatXd vc = fn(x, t, s, c);
      worst_affine = std::max(worst_affine, (v1 - vc).cwiseAbs().maxCoeff());
      MatXd vu = fn(x, t, s, ConditionToken::null());
      cfg.omega = 3.0;
      MatXd v3 = guided_velocity(fn, x, t, s, c, cfg);
      cfg.omega = 5.0;
      MatXd v5 = guided_velocity(fn, x, t, s, c, cfg);
      // affine in omega with slope (V_c - V_phi)
      MatXd slope = (v5 - v3) / 2.0;
      worst_affine = std::max(worst_affine, (slope - (vc - vu)).cwiseAbs().maxCoeff());
      cfg.guidance = GuidanceMode::EnergyPreserving;
      MatXd vep = guided_velocity(fn, x, t, s, c, cfg);
      MatXd x0_ep = x - t * vep, x0_c = x - t * vc;
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double rel = std::abs(x0_ep.row(r).norm() - x0_c.row(r).norm()) /
                     std::max(x0_c.row(r).norm(), 1e-12);
        worst_ep = std::max(worst_ep, rel);
      }
    }
    add("sampler.guidance_affine_and_collapse", worst_affine, 1e-12);
    add("sampler.guidance_energy_preserving_norm", worst_ep, 1e-6);
  }
  {  // metric axioms: identity, symmetry, translation; energy nonnegativity
    Rng rng = root.child(22);
    double worst = 0;
    MatXd a = randn_mat<double>(rng, 64, 2);
    MatXd b = randn_mat<double>(rng, 64, 2);
    worst = std::max(worst, wasserstein2(a, a));
    worst = std::max(worst, std::abs(wasserstein2(a, b) - wasserstein2(b, a)));
    Eigen::RowVector2d shift(0.75, -1.25);
    MatXd a_shift = a;
    a_shift.rowwise() += shift;
    worst = std::max(worst, std::abs(wasserstein2(a, a_shift) - shift.norm()));
    add("evalsuite.w2_axioms", worst, 1e-10);
    double eworst = energy_distance(a, a);
    for (int i = 0; i < 20; ++i) {
      MatXd u = randn_mat<double>(rng, 40, 2), w = randn_mat<double>(rng, 40, 2);
      if (energy_distance(u, w) < 0) eworst = 1;
    }
    add("evalsuite.energy_distance_axioms", eworst, 1e-12);
  }

  return out;
}

int print_report(const std::vector<PropertyResult>& results, std::string* out) {
  std::ostringstream o;
  int failures = 0;
  for (const auto& r : results) {
    if (!r.pass) ++failures;
    char line[256];
    std::snprintf(line, sizeof(line), "[%s] %-40s measured %.3e  threshold %.3e\n",
                  r.pass ? "PASS" : "FAIL", r.name.c_str(), r.measured, r.threshold);
    o << line;
  }
  o << (failures == 0 ? "all properties passed" : std::to_string(failures) + " properties FAILED")
    << " (" << results.size() << " total)\n";
  if (out) *out = o.str();
  return failures;
}

}  // namespace selfe::verify
