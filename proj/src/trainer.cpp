#include "trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "sampler.hpp"

namespace selfe {

namespace fs = std::filesystem;

double lr_at(long iter, const TrainPlan& plan) {
  if (iter > plan.total_iters) throw std::invalid_argument("lr_at: iter beyond total_iters");
  if (iter < plan.warmup_iters) {
    return plan.lr_start * static_cast<double>(iter) / static_cast<double>(plan.warmup_iters);
  }
  long span = plan.total_iters - plan.warmup_iters;
  if (span <= 0) return plan.lr_end;
  double frac = static_cast<double>(iter - plan.warmup_iters) / static_cast<double>(span);
  return plan.lr_start + (plan.lr_end - plan.lr_start) * frac;
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

template <typename T>
void dump_samples(const RunConfig& cfg, const Network<T>& net, const fs::path& dir,
                  const std::string& hash) {
  fs::create_directories(dir);
  CondVelocityFn vfn = make_velocity_fn(net);
  SamplerConfig scfg = cfg.sampler;
  scfg.eta = cfg.eval.eta;
  scfg.omega = cfg.eval.omega;
  scfg.guidance = cfg.eval.guidance;
  scfg.rho = cfg.eval.rho;
  oracle::GmmCond data = cfg.dataset.resolve();
  Rng root(cfg.seed ^ 0x5a5a5a5au);
  for (int steps : cfg.eval.steps) {
    for (int c = 0; c < data.n_classes(); ++c) {
      scfg.n_steps = steps;
      Rng rng = root.child(static_cast<std::uint64_t>(steps) * 131 + static_cast<std::uint64_t>(c));
      MatXd pts = sample(vfn, scfg, ConditionToken::cls(c), cfg.eval.n_samples, data.dim, rng);
      char name[64];
      std::snprintf(name, sizeof(name), "steps%d_cond%d.csv", steps, c);
      std::ostringstream o;
      o << "# config_hash=" << hash << " seed=" << cfg.seed << " model=ema steps=" << steps
        << " cond=" << c << " eta=" << num(scfg.eta) << " omega=" << num(scfg.omega)
        << " guidance=" << guidance_mode_name(scfg.guidance) << " rho=" << num(scfg.rho) << "\n";
      for (int dd = 0; dd < data.dim; ++dd) o << (dd ? "," : "") << "x" << dd;
      o << "\n";
      for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        for (int dd = 0; dd < data.dim; ++dd) o << (dd ? "," : "") << num(pts(i, dd));
        o << "\n";
      }
      atomic_write(dir / name, o.str());
    }
  }
}

template <typename T>
RunRecord train_impl(const RunConfig& cfg, const fs::path& run_dir) {
  fs::create_directories(run_dir / "checkpoints");
  RunLock lock(run_dir);
  std::string hash = config_hash(cfg);
  atomic_write(run_dir / "config.snapshot",
               "# config_hash=" + hash + "\n" + serialize_config(cfg));

  oracle::GmmCond data = cfg.dataset.resolve();
  ScheduleSpec sched = cfg.schedule_spec();
  sched.validate();
  const TrainPlan& plan = cfg.trainer;
  const bool baseline = plan.mode == TrainMode::FlowMatchingBaseline;

  Rng root(cfg.seed);
  Rng rng_init = root.child(1);
  Rng rng_batch = root.child(2);

  Network<T> net = Network<T>::init(cfg.network_config(), rng_init);
  EmaShadow<T> ema = EmaShadow<T>::from(net, cfg.trainer_ema_decay);
  OptimizerState<T> opt = OptimizerState<T>::like(net.params);

  CsvWriter metrics(run_dir / "metrics.csv", hash, cfg.seed,
                    "iter,lr,loss_total,loss_data,loss_self,loss_fake,lambda_mean,lambda_max,grad_norm");
  std::ofstream timing(run_dir / "timing.csv");
  timing << "iter,elapsed_s\n";
  auto wall0 = std::chrono::steady_clock::now();

  RunRecord rec;
  rec.config_hash = hash;
  rec.metrics_path = "metrics.csv";

  long aux_start_iter = static_cast<long>(
      std::llround(plan.aux_start_frac * static_cast<double>(plan.total_iters)));

  auto save_pair = [&](long done_iters) {
    char name[64];
    std::snprintf(name, sizeof(name), "ckpt_%06ld.bin", done_iters);
    char name_ema[64];
    std::snprintf(name_ema, sizeof(name_ema), "ckpt_%06ld_ema.bin", done_iters);
    save_checkpoint(run_dir / "checkpoints" / name, net, CheckpointMeta{done_iters, false});
    save_checkpoint(run_dir / "checkpoints" / name_ema, ema.net, CheckpointMeta{done_iters, true});
    rec.checkpoints.push_back(std::string("checkpoints/") + name);
    rec.checkpoints.push_back(std::string("checkpoints/") + name_ema);
  };

  for (long iter = 0; iter < plan.total_iters; ++iter) {
    double lr = lr_at(iter, plan);
    TrainingBatch<T> batch = make_training_batch<T>(data, sched, cfg.objective, iter,
                                                    plan.batch_size, baseline, rng_batch);
    bool aux_active = !baseline && cfg.objective.aux_enabled && iter >= aux_start_iter;
    NetViews<T> views{&net, &ema.net, nullptr};
    std::vector<Mat<T>> grads;
    LossBreakdown bd =
        total_loss_and_grad(batch, views, cfg.objective, sched, aux_active, baseline, &grads);

    if (!std::isfinite(bd.total)) {
      save_pair(iter);
      rec.status = "aborted";
      rec.reason = "divergence: non-finite loss at iteration " + std::to_string(iter);
      rec.final_iter = iter;
      metrics.flush();
      save_run_record(run_dir, rec);
      return rec;
    }

    double gnorm = grad_global_norm(grads);
    if (cfg.trainer_grad_clip > 0.0 && gnorm > cfg.trainer_grad_clip) {
      T s = static_cast<T>(cfg.trainer_grad_clip / gnorm);
      for (auto& g : grads) g *= s;
    }
    adam_step(opt, net.params, grads, lr);
    ema.update(net);

    if (iter % cfg.trainer_metrics_every == 0 || iter == plan.total_iters - 1) {
      std::ostringstream row;
      row << iter << "," << num(lr) << "," << num(bd.total) << "," << num(bd.data) << ","
          << num(bd.self_eval) << "," << num(bd.fake) << "," << num(bd.lambda_mean) << ","
          << num(bd.lambda_max) << "," << num(gnorm);
      metrics.row(row.str());
      timing << iter << ","
             << std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count()
             << "\n";
    }
    if ((iter + 1) % cfg.trainer_checkpoint_every == 0 || iter + 1 == plan.total_iters) {
      save_pair(iter + 1);
    }
  }

  metrics.flush();
  dump_samples(cfg, ema.net, run_dir / "samples", hash);
  rec.status = "completed";
  rec.final_iter = plan.total_iters;
  save_run_record(run_dir, rec);
  return rec;
}

}  // namespace

RunRecord train_run(const RunConfig& cfg, const fs::path& run_dir) {
  cfg.validate();
  if (cfg.trainer_precision == Precision::F64) return train_impl<double>(cfg, run_dir);
  return train_impl<float>(cfg, run_dir);
}

}  // namespace selfe
