#include "commands.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "runio.hpp"
#include "sampler.hpp"

namespace selfe {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

struct LoadedModel {
  RunConfig cfg;
  Network<float> net;
  std::string hash;
};

LoadedModel load_model(const fs::path& run_dir, std::optional<bool> use_ema = {}) {
  LoadedModel m;
  m.cfg = load_run_config(run_dir);
  m.hash = config_hash(m.cfg);
  m.net = load_checkpoint(find_latest_checkpoint(run_dir, use_ema.value_or(m.cfg.eval.use_ema)));
  return m;
}

SamplerFn sampler_fn_for(const Network<float>& net, const RunConfig& cfg, double eta,
                         double omega, GuidanceMode guidance, double rho, int dim) {
  return [&net, eta, omega, guidance, rho, dim, mu = warp_mu(cfg.schedule_warp_len)](
             int condition, int n_steps, int n, std::uint64_t seed) {
    SamplerConfig scfg;
    scfg.n_steps = n_steps;
    scfg.eta = eta;
    scfg.omega = omega;
    scfg.guidance = guidance;
    scfg.rho = rho;
    scfg.mu = mu;
    Rng rng(seed);
    CondVelocityFn vfn = make_velocity_fn(net);
    return sample(vfn, scfg, ConditionToken::cls(condition), n, dim, rng);
  };
}

void write_report_csv(const fs::path& path, const std::vector<MetricCell>& cells,
                      const std::string& hash, std::uint64_t seed) {
  CsvWriter w(path, hash, seed, "model,condition,steps,n,seed,w2,w2_floor,energy,exact,epsilon");
  for (const auto& c : cells) {
    std::ostringstream o;
    o << c.model << "," << c.condition << "," << c.n_steps << "," << c.n << "," << c.seed << ","
      << num(c.w2) << "," << num(c.w2_floor) << "," << num(c.energy) << ","
      << (c.exact ? "true" : "false") << "," << num(c.epsilon);
    w.row(o.str());
  }
  w.flush();
}

void write_timing_csv(const fs::path& path, const std::vector<MetricCell>& cells) {
  std::ofstream out(path);
  out << "model,condition,steps,wall_ms\n";
  for (const auto& c : cells)
    out << c.model << "," << c.condition << "," << c.n_steps << "," << c.wall_ms << "\n";
}

void write_plot_csv(const fs::path& path, const std::vector<MetricCell>& cells,
                    const std::string& hash, std::uint64_t seed) {
  std::map<int, std::map<int, double>> by_step;  // steps -> condition -> w2
  std::map<int, bool> conds;
  for (const auto& c : cells) {
    by_step[c.n_steps][c.condition] = c.w2;
    conds[c.condition] = true;
  }
  std::ostringstream cols;
  cols << "steps";
  for (const auto& [c, _] : conds) cols << ",w2_cond" << c;
  cols << ",w2_mean";
  CsvWriter w(path, hash, seed, cols.str());
  for (const auto& [steps, per_cond] : by_step) {
    std::ostringstream o;
    o << steps;
    double sum = 0;
    for (const auto& [c, _] : conds) {
      double v = per_cond.at(c);
      o << "," << num(v);
      sum += v;
    }
    o << "," << num(sum / static_cast<double>(conds.size()));
    w.row(o.str());
  }
  w.flush();
}

}  // namespace

RunConfig load_run_config(const fs::path& run_dir) {
  fs::path snap = run_dir / "config.snapshot";
  if (!fs::exists(snap)) throw ConfigError("no config snapshot in " + run_dir.string());
  return load_config(snap.string());
}

std::vector<MetricCell> run_eval(const fs::path& run_dir, const EvalOptions& opt) {
  LoadedModel m = load_model(run_dir);
  fs::path out_dir = opt.out_dir.empty() ? run_dir / "eval" : opt.out_dir;
  fs::create_directories(out_dir);

  std::vector<int> steps = opt.steps.empty() ? m.cfg.eval.steps : opt.steps;
  int n = opt.n_samples > 0 ? opt.n_samples : m.cfg.eval.n_samples;
  std::uint64_t seed = opt.seed.value_or(m.cfg.seed);
  oracle::GmmCond data = m.cfg.dataset.resolve();
  std::vector<int> conditions;
  for (int c = 0; c < data.n_classes(); ++c) conditions.push_back(c);

  SamplerFn fn = sampler_fn_for(m.net, m.cfg, m.cfg.eval.eta, m.cfg.eval.omega,
                                m.cfg.eval.guidance, m.cfg.eval.rho, data.dim);
  std::string model_name =
      m.cfg.trainer.mode == TrainMode::SelfE ? "self_e" : "flow_matching_baseline";
  std::vector<MetricCell> cells =
      step_sweep(fn, model_name, data, conditions, steps, n, seed, m.cfg.eval.bootstrap);

  write_report_csv(out_dir / "report.csv", cells, m.hash, seed);
  write_plot_csv(out_dir / "plot_w2_vs_steps.csv", cells, m.hash, seed);
  write_timing_csv(out_dir / "timing.csv", cells);

  std::ostringstream sum;
  sum << "config_hash = " << m.hash << "\n";
  sum << "seed = " << seed << "\n";
  sum << "model = " << model_name << "\n";
  sum << "cells = " << cells.size() << "\n";
  for (int k : steps) {
    AggregateW2 agg = aggregate_w2(cells, k);
    sum << "w2_mean_steps" << k << " = " << num(agg.w2) << "\n";
    sum << "w2_floor_steps" << k << " = " << num(agg.floor) << "\n";
  }
  if (steps.size() >= 3) {
    for (const auto& v : monotonicity_check(cells)) {
      sum << "monotone_cond" << v.condition << " = " << (v.ok ? "true" : "false") << "\n";
      sum << "monotone_cond" << v.condition << "_worst_jump_sigma = " << num(v.worst_jump_sigma)
          << "\n";
    }
  }
  atomic_write(out_dir / "summary.txt", sum.str());
  return cells;
}

std::vector<MetricCell> run_sweep(const fs::path& run_dir, const std::string& axis,
                                  std::vector<double> values, const EvalOptions& opt) {
  if (axis != "s_strategy" && axis != "eta" && axis != "omega" && axis != "steps")
    throw ConfigError("unknown sweep axis '" + axis + "' (expected s_strategy|eta|omega|steps)");

  LoadedModel m = load_model(run_dir);
  fs::path out_dir = opt.out_dir.empty() ? run_dir / "sweep" : opt.out_dir;
  fs::create_directories(out_dir);

  if (values.empty()) {
    if (axis == "s_strategy") values = {0.0, 0.5, 1.0};
    else if (axis == "eta") values = {0.0, 1.0};
    else if (axis == "omega") values = {1.0, 2.0, 5.0};
    else values = {1, 2, 4, 8, 32};
  }

  oracle::GmmCond data = m.cfg.dataset.resolve();
  std::vector<int> conditions;
  for (int c = 0; c < data.n_classes(); ++c) conditions.push_back(c);
  std::vector<int> steps = opt.steps.empty() ? m.cfg.eval.steps : opt.steps;
  int n = opt.n_samples > 0 ? opt.n_samples : m.cfg.eval.n_samples;
  std::uint64_t seed = opt.seed.value_or(m.cfg.seed);
  std::string model_name =
      m.cfg.trainer.mode == TrainMode::SelfE ? "self_e" : "flow_matching_baseline";

  std::vector<MetricCell> all;
  std::vector<std::vector<MetricCell>> per_value;
  if (axis == "steps") {
    std::vector<int> int_steps;
    for (double v : values) int_steps.push_back(static_cast<int>(v));
    SamplerFn fn = sampler_fn_for(m.net, m.cfg, m.cfg.eval.eta, m.cfg.eval.omega,
                                  m.cfg.eval.guidance, m.cfg.eval.rho, data.dim);
    all = step_sweep(fn, model_name, data, conditions, int_steps, n, seed, m.cfg.eval.bootstrap);
    per_value.push_back(all);
  } else {
    for (double v : values) {
      double eta = m.cfg.eval.eta, omega = m.cfg.eval.omega, rho = m.cfg.eval.rho;
      GuidanceMode guidance = m.cfg.eval.guidance;
      if (axis == "s_strategy") rho = v;
      if (axis == "eta") eta = v;
      if (axis == "omega") {
        omega = v;
        guidance = v > 1.0 ? GuidanceMode::EnergyPreserving : GuidanceMode::Off;
      }
      SamplerFn fn = sampler_fn_for(m.net, m.cfg, eta, omega, guidance, rho, data.dim);
      auto cells = step_sweep(fn, model_name + "[" + axis + "=" + num(v) + "]", data, conditions,
                              steps, n, seed, m.cfg.eval.bootstrap);
      per_value.push_back(cells);
      all.insert(all.end(), cells.begin(), cells.end());
    }
  }

  // comparative CSV: one W2 column per axis value
  std::ostringstream cols;
  cols << "condition,steps";
  if (axis == "steps") {
    cols << ",w2";
  } else {
    for (double v : values) cols << ",w2[" << axis << "=" << num(v) << "]";
  }
  CsvWriter w(out_dir / ("sweep_" + axis + ".csv"), m.hash, seed, cols.str());
  if (axis == "steps") {
    for (const auto& c : all) {
      std::ostringstream o;
      o << c.condition << "," << c.n_steps << "," << num(c.w2);
      w.row(o.str());
    }
  } else {
    for (int c : conditions) {
      for (int k : steps) {
        std::ostringstream o;
        o << c << "," << k;
        for (const auto& cells : per_value) {
          for (const auto& cell : cells)
            if (cell.condition == c && cell.n_steps == k) o << "," << num(cell.w2);
        }
        w.row(o.str());
      }
    }
  }
  w.flush();
  write_plot_csv(out_dir / ("plot_" + axis + ".csv"), all, m.hash, seed);
  write_timing_csv(out_dir / ("timing_" + axis + ".csv"), all);

  if (axis == "steps" && values.size() >= 3) {
    std::ostringstream sum;
    for (const auto& v : monotonicity_check(all))
      sum << "monotone_cond" << v.condition << " = " << (v.ok ? "true" : "false") << "\n";
    atomic_write(out_dir / "sweep_steps_monotonicity.txt", sum.str());
  }
  return all;
}

MatXd run_sample(const fs::path& run_dir, int condition, int n, int steps, double eta,
                 double omega, GuidanceMode guidance, double rho, std::uint64_t seed,
                 bool use_ema) {
  LoadedModel m = load_model(run_dir, use_ema);
  oracle::GmmCond data = m.cfg.dataset.resolve();
  if (condition < 0 || condition >= data.n_classes())
    throw std::invalid_argument("run_sample: condition out of range");
  SamplerConfig scfg;
  scfg.n_steps = steps;
  scfg.eta = eta;
  scfg.omega = omega;
  scfg.guidance = guidance;
  scfg.rho = rho;
  scfg.mu = warp_mu(m.cfg.schedule_warp_len);
  Rng rng(seed);
  CondVelocityFn vfn = make_velocity_fn(m.net);
  return sample(vfn, scfg, ConditionToken::cls(condition), n, data.dim, rng);
}

}  // namespace selfe
