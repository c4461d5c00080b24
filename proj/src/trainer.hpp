#pragma once

#include <filesystem>

#include "config.hpp"
#include "objective.hpp"
#include "runio.hpp"

namespace selfe {

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Linear warmup to lr_start over warmup_iters, then linear decay reaching
/// lr_end at total_iters.
double lr_at(long iter, const TrainPlan& plan);

/// Adam accumulators; shapes mirror the parameter list.
template <typename T>
struct OptimizerState {
  std::vector<Mat<T>> m, v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;

  static OptimizerState like(const std::vector<Mat<T>>& params) {
    OptimizerState st;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const auto& p : params) {
      st.m.push_back(Mat<T>::Zero(p.rows(), p.cols()));
      st.v.push_back(Mat<T>::Zero(p.rows(), p.cols()));
    }
    return st;
  }
};

/// Bias-corrected Adam update, in place.
template <typename T>
void adam_step(OptimizerState<T>& st, std::vector<Mat<T>>& params,
               const std::vector<Mat<T>>& grads, double lr) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  ++st.step;
  double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  T b1 = static_cast<T>(st.beta1), b2 = static_cast<T>(st.beta2);
  T scale = static_cast<T>(lr / bc1);
  T eps = static_cast<T>(st.eps);
  T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  for (size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i].rows() || grads[i].cols() != params[i].cols())
      throw std::invalid_argument("adam_step: gradient shape mismatch at slot " + std::to_string(i));
    st.m[i] = b1 * st.m[i] + (T(1) - b1) * grads[i];
    st.v[i] = b2 * st.v[i] + (T(1) - b2) * grads[i].cwiseProduct(grads[i]);
    params[i].array() -=
        scale * st.m[i].array() / (st.v[i].array().sqrt() * inv_sqrt_bc2 + eps);
  }
}

/// Global gradient norm across all slots.
template <typename T>
double grad_global_norm(const std::vector<Mat<T>>& grads) {
  double acc = 0;
  for (const auto& g : grads) acc += static_cast<double>(g.template cast<double>().squaredNorm());
  return std::sqrt(acc);
}

/// One training batch: class draw, data draw, noise, (t, s) pair, condition
/// dropout. Every stream is consumed in a fixed order regardless of mode, so
/// modes and stages see identical batches for a given seed.
template <typename T>
TrainingBatch<T> make_training_batch(const oracle::GmmCond& data, const ScheduleSpec& sched,
                                     const ObjectiveConfig& ocfg, long iter, int batch_size,
                                     bool baseline, Rng& rng) {
  std::vector<TrainingPair<T>> pairs;
  pairs.reserve(static_cast<size_t>(batch_size));
  for (int b = 0; b < batch_size; ++b) {
    double u = rng.uniform(), acc = 0.0;
    int k = data.n_classes() - 1;
    for (int j = 0; j < data.n_classes(); ++j) {
      acc += data.priors[static_cast<size_t>(j)];
      if (u < acc) { k = j; break; }
    }
    Vec<T> x0 =
        oracle::sample_ground_truth(data, rng, 1, ConditionToken::cls(k)).row(0).transpose().cast<T>();
    Vec<T> eps = randn_vec<T>(rng, data.dim);
    double t = sample_t(rng, sched);
    double s = sample_s(rng, t, iter, sched);
    bool drop = rng.bernoulli(ocfg.cond_dropout);
    if (baseline) s = t;
    ConditionToken c = drop ? ConditionToken::null() : ConditionToken::cls(k);
    pairs.push_back(TrainingPair<T>::make(std::move(x0), std::move(eps), t, s, c));
  }
  return TrainingBatch<T>::from_pairs(pairs, rng);
}

/// Full training run into run_dir: iteration loop, checkpoints, metrics,
/// final sample dumps. Throws LockedError if the directory is in use;
/// divergence checkpoints and returns an aborted record.
RunRecord train_run(const RunConfig& cfg, const std::filesystem::path& run_dir);

}  // namespace selfe
