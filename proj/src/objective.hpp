#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "backbone.hpp"
#include "schedule.hpp"

namespace selfe {

struct ObjectiveConfig {
  double omega_train = 10.0;  // implied training-time guidance scale
  double k_mix = 0.9;         // classifier/auxiliary mixing, k = (omega-1)/omega
  bool aux_enabled = true;
  bool renorm_enabled = true;
  double lambda_cap = 20.0;
  double cond_dropout = 0.1;  // probability of replacing c with the null condition
  bool ema_split = true;      // EMA for the conditional branch, live for the rest
};

/// Schedule-derived self-evaluation weight sigma_t/alpha_t - sigma_s/alpha_s,
/// clamped to [0, cap]; zero when s = t.
inline double lambda_weight(double s, double t, double cap) {
  auto ratio = [](double u) { return u / std::max(1.0 - u, 1e-300); };
  double lam = ratio(t) - ratio(s);
  return std::min(std::max(lam, 0.0), cap);
}

/// Squared Euclidean distance between prediction and clean sample.
template <typename T>
T data_loss(const Vec<T>& x0_hat, const Vec<T>& x0) {
  if (x0_hat.size() != x0.size()) throw std::invalid_argument("data_loss: dimension mismatch");
  return (x0_hat - x0).squaredNorm();
}

/// Energy-preserving target (x0 + lam * x_self) * ||x0|| / ||x0 + lam * x_self||.
/// Falls back to x0 when the denominator degenerates.
template <typename T>
Vec<T> renorm_target(const Vec<T>& x0, const Vec<T>& x_self, double lam) {
  Vec<T> mix = x0 + static_cast<T>(lam) * x_self;
  double denom = static_cast<double>(mix.norm());
  if (denom < 1e-8) return x0;
  return mix * static_cast<T>(static_cast<double>(x0.norm()) / denom);
}

/// Per-pair objective: with renormalization, ||x0_hat - x_renorm||^2;
/// without, ||x0_hat - x0||^2 + lam * ||x0_hat - x_self||^2.
template <typename T>
T pair_loss(const Vec<T>& x0_hat, const Vec<T>& x0, const Vec<T>& x_self, double lam,
            bool renorm_enabled) {
  if (lam < 0.0) throw std::invalid_argument("pair_loss: lambda must be nonnegative");
  if (renorm_enabled) {
    Vec<T> target = renorm_target(x0, x_self, lam);
    return (x0_hat - target).squaredNorm();
  }
  return (x0_hat - x0).squaredNorm() + static_cast<T>(lam) * (x0_hat - x_self).squaredNorm();
}

/// Gradient-detached self-evaluation target.
struct PseudoTarget {
  VecXd x_self;
  bool detached = true;
};

/// Evaluation view of a clean-sample head: x_s, s, condition -> x0 estimate.
using GFn = std::function<VecXd(const VecXd& x_s, double s, const ConditionToken& c)>;

template <typename T>
GFn make_g_view(const Network<T>& net) {
  return [&net](const VecXd& x_s, double s, const ConditionToken& c) {
    Vec<T> x = x_s.cast<T>();
    return net.predict_x0_point(x, s, s, c).template cast<double>().eval();
  };
}

/// Classifier-score pseudo-target from an already re-noised x_hat_s:
/// sg[x0_hat - (G(x_hat_s, s, s, phi) - G(x_hat_s, s, s, c))].
inline PseudoTarget pseudo_target_from_noised(const GFn& g_cond, const GFn& g_uncond,
                                              const VecXd& x0_hat, const VecXd& x_hat_s,
                                              double s, const ConditionToken& c) {
  if (!(s >= 0.0 && s <= 1.0)) throw std::domain_error("pseudo_target: s outside [0, 1]");
  VecXd delta = g_uncond(x_hat_s, s, ConditionToken::null()) - g_cond(x_hat_s, s, c);
  return PseudoTarget{x0_hat - delta, true};
}

/// k-mixed pseudo-target with the fake-tagged auxiliary branch.
inline PseudoTarget pseudo_target_aux_from_noised(const GFn& g_cond, const GFn& g_uncond,
                                                  const GFn& g_fake, const VecXd& x0_hat,
                                                  const VecXd& x_hat_s, double s,
                                                  const ConditionToken& c, double k) {
  if (!(s >= 0.0 && s <= 1.0)) throw std::domain_error("pseudo_target: s outside [0, 1]");
  if (!c.is_class()) throw std::invalid_argument("pseudo_target_aux: needs a class condition");
  VecXd gc = g_cond(x_hat_s, s, c);
  VecXd gu = g_uncond(x_hat_s, s, ConditionToken::null());
  VecXd gf = g_fake(x_hat_s, s, ConditionToken::fake(c.id));
  VecXd delta = k * (gu - gc) + (1.0 - k) * (gf - gc);
  return PseudoTarget{x0_hat - delta, true};
}

/// Re-noises x0_hat with a fresh draw and builds the classifier pseudo-target.
/// The conditional pass should be given the EMA view, the unconditional pass
/// the live view.
inline PseudoTarget pseudo_target_classifier(const GFn& g_cond, const GFn& g_uncond,
                                             const VecXd& x0_hat, double s,
                                             const ConditionToken& c, Rng& rng) {
  auto [alpha, sigma] = alpha_sigma(s);
  VecXd eps = randn_vec<double>(rng, x0_hat.size());
  VecXd x_hat_s = alpha * x0_hat + sigma * eps;
  return pseudo_target_from_noised(g_cond, g_uncond, x0_hat, x_hat_s, s, c);
}

inline PseudoTarget pseudo_target_aux(const GFn& g_cond, const GFn& g_uncond, const GFn& g_fake,
                                      const VecXd& x0_hat, double s, const ConditionToken& c,
                                      double k, Rng& rng) {
  auto [alpha, sigma] = alpha_sigma(s);
  VecXd eps = randn_vec<double>(rng, x0_hat.size());
  VecXd x_hat_s = alpha * x0_hat + sigma * eps;
  return pseudo_target_aux_from_noised(g_cond, g_uncond, g_fake, x0_hat, x_hat_s, s, c, k);
}

/// One optimization sample; x_t is derived from (x0, eps, t).
template <typename T>
struct TrainingPair {
  Vec<T> x0;
  Vec<T> eps;
  TimePair ts;
  ConditionToken c;
  Vec<T> x_t;

  static TrainingPair make(Vec<T> x0, Vec<T> eps, double t, double s, ConditionToken c) {
    auto [alpha, sigma] = alpha_sigma(t);
    Vec<T> x_t = static_cast<T>(alpha) * x0 + static_cast<T>(sigma) * eps;
    return TrainingPair{std::move(x0), std::move(eps), TimePair{t, s}, c, std::move(x_t)};
  }
};

/// Structure-of-arrays batch, with the re-noising draws for pseudo-targets
/// and the fake branch pre-drawn so that the loss is a pure function of the
/// parameters given the batch.
template <typename T>
struct TrainingBatch {
  Mat<T> x0, eps, x_t;  // n x d
  VecXd t, s;
  std::vector<ConditionToken> cond;
  Mat<T> eps_prime;  // pseudo-target re-noising
  Mat<T> eps_fake;   // fake-branch re-noising

  Eigen::Index size() const { return x0.rows(); }

  static TrainingBatch from_pairs(const std::vector<TrainingPair<T>>& pairs, Rng& rng) {
    if (pairs.empty()) throw std::invalid_argument("TrainingBatch: empty batch");
    Eigen::Index n = static_cast<Eigen::Index>(pairs.size());
    Eigen::Index d = pairs[0].x0.size();
    TrainingBatch b;
    b.x0.resize(n, d);
    b.eps.resize(n, d);
    b.x_t.resize(n, d);
    b.t.resize(n);
    b.s.resize(n);
    b.cond.reserve(pairs.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& p = pairs[static_cast<size_t>(i)];
      b.x0.row(i) = p.x0.transpose();
      b.eps.row(i) = p.eps.transpose();
      b.x_t.row(i) = p.x_t.transpose();
      b.t(i) = p.ts.t;
      b.s(i) = p.ts.s;
      b.cond.push_back(p.c);
    }
    b.eps_prime = randn_mat<T>(rng, n, d);
    b.eps_fake = randn_mat<T>(rng, n, d);
    return b;
  }

  TrainingPair<T> pair(Eigen::Index i) const {
    return TrainingPair<T>{x0.row(i).transpose(), eps.row(i).transpose(),
                           TimePair{t(i), s(i)}, cond[static_cast<size_t>(i)],
                           x_t.row(i).transpose()};
  }
};

/// Parameter views feeding the loss. `live` carries gradient; `ema` serves
/// the conditional pseudo branch; `sg_live` is the frozen live view used
/// inside stop-gradient passes (defaults to `live`; the gradient checks pass
/// an explicit frozen copy).
template <typename T>
struct NetViews {
  const Network<T>* live = nullptr;
  const Network<T>* ema = nullptr;
  const Network<T>* sg_live = nullptr;

  const Network<T>& sg() const { return sg_live ? *sg_live : *live; }
};

struct LossBreakdown {
  double total = 0;      // pair term (+ fake term when active)
  double data = 0;       // weighted mean ||x0_hat - x0||^2 (diagnostic)
  double self_eval = 0;  // weighted mean lam * ||x0_hat - x_self||^2 (diagnostic)
  double fake = 0;
  double lambda_mean = 0;
  double lambda_max = 0;
};

/// Frozen (stop-gradient) quantities for one batch: regression targets,
/// weights, and the fake-branch inputs. Nothing here depends on the live
/// parameters that phase two differentiates.
template <typename T>
struct BatchTargets {
  VecXd weights;          // pair_weight(t)
  VecXd lambda;           // per-pair self-evaluation weight
  Mat<T> target;          // renorm-mode regression target
  Mat<T> x_self;          // pseudo-targets (x0 rows where inactive)
  std::vector<int> fake_idx;
  Mat<T> fake_inputs;     // frozen re-noised model samples
  VecXd fake_s;
  std::vector<int> fake_rows;
  Mat<T> fake_target;     // frozen model predictions
  bool has_fake = false;
};

template <typename T>
BatchTargets<T> build_targets(const TrainingBatch<T>& batch, const NetViews<T>& views,
                              const ObjectiveConfig& cfg, const ScheduleSpec& sched,
                              bool aux_active, bool baseline) {
  Eigen::Index n = batch.size();
  if (n == 0) throw std::invalid_argument("build_targets: empty batch");
  int n_classes = views.sg().cfg.classes;
  BatchTargets<T> out;
  out.weights.resize(n);
  out.lambda = VecXd::Zero(n);
  out.x_self = batch.x0;
  out.target = batch.x0;
  for (Eigen::Index i = 0; i < n; ++i) out.weights(i) = pair_weight(batch.t(i), sched.t_min);
  if (baseline) return out;

  // Self-evaluation rows: strict gap and a class condition. Null-conditioned
  // pairs stay on the pure data loss (there is no classifier signal for phi).
  std::vector<int> active;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (batch.cond[static_cast<size_t>(i)].is_class() && batch.s(i) < batch.t(i) - 1e-15) {
      double lam = lambda_weight(batch.s(i), batch.t(i), cfg.lambda_cap);
      if (lam > 0.0) {
        out.lambda(i) = lam;
        active.push_back(static_cast<int>(i));
      }
    }
  }

  const Network<T>& sg_net = views.sg();
  const Network<T>& cond_net = cfg.ema_split && views.ema ? *views.ema : sg_net;
  bool use_aux = aux_active && cfg.aux_enabled;
  if (active.empty() && !use_aux) return out;

  // Frozen model predictions for the whole batch (needed by the fake branch
  // and, on active rows, for re-noising).
  std::vector<int> rows_all(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    rows_all[static_cast<size_t>(i)] = batch.cond[static_cast<size_t>(i)].row(n_classes);
  Mat<T> x0_hat_base = sg_net.predict_x0(batch.x_t, batch.t, batch.s, rows_all);

  if (!active.empty()) {
    Eigen::Index m = static_cast<Eigen::Index>(active.size());
    Mat<T> xs(m, batch.x0.cols());
    VecXd sv(m);
    std::vector<int> rc(active.size()), rn(active.size()), rf(active.size());
    for (Eigen::Index j = 0; j < m; ++j) {
      int i = active[static_cast<size_t>(j)];
      auto [alpha, sigma] = alpha_sigma(batch.s(i));
      xs.row(j) = static_cast<T>(alpha) * x0_hat_base.row(i) +
                  static_cast<T>(sigma) * batch.eps_prime.row(i);
      sv(j) = batch.s(i);
      const ConditionToken& c = batch.cond[static_cast<size_t>(i)];
      rc[static_cast<size_t>(j)] = c.row(n_classes);
      rn[static_cast<size_t>(j)] = ConditionToken::null().row(n_classes);
      rf[static_cast<size_t>(j)] = ConditionToken::fake(c.id).row(n_classes);
    }
    Mat<T> g_cond = cond_net.predict_x0(xs, sv, sv, rc);
    Mat<T> g_uncond = sg_net.predict_x0(xs, sv, sv, rn);
    Mat<T> delta;
    if (use_aux) {
      Mat<T> g_fake = sg_net.predict_x0(xs, sv, sv, rf);
      T k = static_cast<T>(cfg.k_mix);
      delta = k * (g_uncond - g_cond) + (T(1) - k) * (g_fake - g_cond);
    } else {
      delta = g_uncond - g_cond;
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      int i = active[static_cast<size_t>(j)];
      Vec<T> x_self = (x0_hat_base.row(i) - delta.row(j)).transpose();
      out.x_self.row(i) = x_self.transpose();
      Vec<T> x0 = batch.x0.row(i).transpose();
      out.target.row(i) = renorm_target(x0, x_self, out.lambda(i)).transpose();
    }
  }

  if (use_aux) {
    std::vector<int> fid;
    for (Eigen::Index i = 0; i < n; ++i)
      if (batch.cond[static_cast<size_t>(i)].is_class()) fid.push_back(static_cast<int>(i));
    if (!fid.empty()) {
      Eigen::Index m = static_cast<Eigen::Index>(fid.size());
      out.fake_idx = fid;
      out.fake_inputs.resize(m, batch.x0.cols());
      out.fake_target.resize(m, batch.x0.cols());
      out.fake_s.resize(m);
      out.fake_rows.resize(fid.size());
      for (Eigen::Index j = 0; j < m; ++j) {
        int i = fid[static_cast<size_t>(j)];
        auto [alpha, sigma] = alpha_sigma(batch.s(i));
        out.fake_inputs.row(j) = static_cast<T>(alpha) * x0_hat_base.row(i) +
                                 static_cast<T>(sigma) * batch.eps_fake.row(i);
        out.fake_target.row(j) = x0_hat_base.row(i);
        out.fake_s(j) = batch.s(i);
        out.fake_rows[static_cast<size_t>(j)] =
            ConditionToken::fake(batch.cond[static_cast<size_t>(i)].id).row(n_classes);
      }
      out.has_fake = true;
    }
  }
  return out;
}

/// Total objective and (optionally) parameter gradients. Gradient flows
/// through exactly two passes: the main prediction and the fake branch; the
/// targets built in build_targets are constants.
template <typename T>
LossBreakdown total_loss_and_grad(const TrainingBatch<T>& batch, const NetViews<T>& views,
                                  const ObjectiveConfig& cfg, const ScheduleSpec& sched,
                                  bool aux_active, bool baseline,
                                  std::vector<Mat<T>>* grads_out) {
  BatchTargets<T> tg = build_targets(batch, views, cfg, sched, aux_active, baseline);
  Eigen::Index n = batch.size();
  int n_classes = views.live->cfg.classes;

  ad::Tape<T> tape(grads_out != nullptr);
  TapeNet<T> live = TapeNet<T>::bind(tape, *views.live);

  std::vector<int> rows(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    rows[static_cast<size_t>(i)] = batch.cond[static_cast<size_t>(i)].row(n_classes);
  auto x0_hat = live.predict_x0(tape, batch.x_t, batch.t, batch.s, rows);

  typename ad::Tape<T>::Ref pair_term;
  if (cfg.renorm_enabled || baseline) {
    pair_term = tape.weighted_mean(tape.sqnorm_rows(tape.sub(x0_hat, tape.constant(tg.target))),
                                   tg.weights);
  } else {
    auto data_term = tape.weighted_mean(
        tape.sqnorm_rows(tape.sub(x0_hat, tape.constant(batch.x0))), tg.weights);
    auto self_term = tape.weighted_mean(
        tape.sqnorm_rows(tape.sub(x0_hat, tape.constant(tg.x_self))),
        (tg.weights.array() * tg.lambda.array()).matrix());
    pair_term = tape.add(data_term, self_term);
  }
  auto total = pair_term;
  double fake_value = 0;
  if (tg.has_fake) {
    auto g_fake = live.predict_x0(tape, tg.fake_inputs, tg.fake_s, tg.fake_s, tg.fake_rows);
    auto fake_term = tape.weighted_mean(
        tape.sqnorm_rows(tape.sub(g_fake, tape.constant(tg.fake_target))),
        VecXd::Ones(tg.fake_inputs.rows()));
    fake_value = static_cast<double>(tape.value(fake_term)(0, 0));
    total = tape.add(total, fake_term);
  }

  LossBreakdown bd;
  bd.total = static_cast<double>(tape.value(total)(0, 0));
  bd.fake = fake_value;
  bd.lambda_mean = tg.lambda.mean();
  bd.lambda_max = tg.lambda.size() ? tg.lambda.maxCoeff() : 0.0;
  // Diagnostics from the already-computed prediction.
  const Mat<T>& pred = tape.value(x0_hat);
  VecXd dsq(n), ssq(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    dsq(i) = static_cast<double>((pred.row(i) - batch.x0.row(i)).squaredNorm());
    ssq(i) = tg.lambda(i) * static_cast<double>((pred.row(i) - tg.x_self.row(i)).squaredNorm());
  }
  bd.data = dsq.dot(tg.weights) / static_cast<double>(n);
  bd.self_eval = ssq.dot(tg.weights) / static_cast<double>(n);

  if (grads_out) {
    tape.backward(total);
    *grads_out = live.grads(tape);
  }
  return bd;
}

/// Scalar objective (mean over the batch of pair_weight * pair_loss, plus the
/// fake-branch term when the auxiliary stage is active).
template <typename T>
double total_loss(const TrainingBatch<T>& batch, const NetViews<T>& views,
                  const ObjectiveConfig& cfg, const ScheduleSpec& sched, bool aux_active,
                  bool baseline = false) {
  return total_loss_and_grad(batch, views, cfg, sched, aux_active, baseline,
                             static_cast<std::vector<Mat<T>>*>(nullptr))
      .total;
}

/// Standalone fake-branch regression loss over detached model samples.
template <typename T>
double fake_branch_loss(const Network<T>& net, const Mat<T>& model_samples, const VecXd& s,
                        const std::vector<ConditionToken>& conds, Rng& rng) {
  Eigen::Index n = model_samples.rows();
  if (s.size() != n || static_cast<Eigen::Index>(conds.size()) != n)
    throw std::invalid_argument("fake_branch_loss: size mismatch");
  Mat<T> eps = randn_mat<T>(rng, n, model_samples.cols());
  Mat<T> xs(n, model_samples.cols());
  std::vector<int> rows(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto [alpha, sigma] = alpha_sigma(s(i));
    xs.row(i) = static_cast<T>(alpha) * model_samples.row(i) + static_cast<T>(sigma) * eps.row(i);
    rows[static_cast<size_t>(i)] = ConditionToken::fake(conds[static_cast<size_t>(i)].id).row(net.cfg.classes);
  }
  Mat<T> pred = net.predict_x0(xs, s, s, rows);
  return static_cast<double>((pred - model_samples).rowwise().squaredNorm().sum()) /
         static_cast<double>(n);
}

}  // namespace selfe
