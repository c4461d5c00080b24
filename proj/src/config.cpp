#include "config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "datasets.hpp"

namespace selfe {

const char* guidance_mode_name(GuidanceMode m) {
  switch (m) {
    case GuidanceMode::Off: return "off";
    case GuidanceMode::Standard: return "standard";
    case GuidanceMode::EnergyPreserving: return "energy_preserving";
  }
  return "off";
}

GuidanceMode parse_guidance_mode(const std::string& s) {
  if (s == "off") return GuidanceMode::Off;
  if (s == "standard") return GuidanceMode::Standard;
  if (s == "energy_preserving") return GuidanceMode::EnergyPreserving;
  throw ConfigError("guidance mode must be off|standard|energy_preserving, got '" + s + "'");
}

oracle::GmmCond DatasetSpec::resolve() const {
  if (preset == "custom") {
    custom.validate();
    return custom;
  }
  return make_preset(preset);
}

ScheduleSpec RunConfig::schedule_spec() const {
  ScheduleSpec s;
  s.t_min = schedule_t_min;
  s.warp_len = schedule_warp_len;
  s.p_equal = schedule_p_equal;
  s.tau_anneal_iters =
      std::max<long>(1, std::lround(schedule_tau_frac * static_cast<double>(trainer.total_iters)));
  return s;
}

NetworkConfig RunConfig::network_config() const {
  oracle::GmmCond data = dataset.resolve();
  NetworkConfig n;
  n.dim = data.dim;
  n.classes = data.n_classes();
  n.hidden = model_hidden;
  n.depth = model_depth;
  n.cond_emb = model_cond_emb;
  n.time_feats = model_time_features;
  return n;
}

void RunConfig::validate() const {
  std::vector<std::string> errors;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) errors.push_back(msg);
  };
  check(!out_dir.empty(), "out_dir: must not be empty");
  if (dataset.preset != "custom" && !is_known_preset(dataset.preset))
    errors.push_back("dataset.preset: unknown preset '" + dataset.preset + "'");
  if (dataset.preset == "custom") {
    try {
      dataset.custom.validate();
    } catch (const std::exception& e) {
      errors.push_back(std::string("dataset.custom: ") + e.what());
    }
  }
  check(model_hidden >= 1, "model.hidden: must be positive");
  check(model_depth >= 1, "model.depth: must be positive");
  check(model_cond_emb >= 1, "model.cond_emb: must be positive");
  check(model_time_features >= 2 && model_time_features % 2 == 0,
        "model.time_features: must be even and >= 2");
  check(schedule_t_min > 0.0 && schedule_t_min < 0.5, "schedule.t_min: must lie in (0, 0.5)");
  check(schedule_warp_len >= 1, "schedule.warp_len: must be >= 1");
  check(schedule_p_equal >= 0.0 && schedule_p_equal <= 1.0, "schedule.p_equal: must lie in [0, 1]");
  check(schedule_tau_frac > 0.0 && schedule_tau_frac <= 1.0, "schedule.tau_frac: must lie in (0, 1]");
  check(trainer.total_iters >= 1, "trainer.total_iters: must be positive");
  check(trainer.warmup_iters >= 0 && trainer.warmup_iters < trainer.total_iters,
        "trainer.warmup_iters: must lie in [0, total_iters)");
  check(trainer.lr_start >= trainer.lr_end && trainer.lr_end > 0.0,
        "trainer.lr_start/lr_end: need lr_start >= lr_end > 0");
  check(trainer.aux_start_frac >= 0.0 && trainer.aux_start_frac <= 1.0,
        "trainer.aux_start_frac: must lie in [0, 1]");
  check(trainer.batch_size >= 1, "trainer.batch_size: must be positive");
  check(trainer_ema_decay >= 0.0 && trainer_ema_decay <= 1.0,
        "trainer.ema_decay: must lie in [0, 1]");
  check(trainer_grad_clip >= 0.0, "trainer.grad_clip: must be nonnegative");
  check(trainer_checkpoint_every >= 1, "trainer.checkpoint_every: must be positive");
  check(trainer_metrics_every >= 1, "trainer.metrics_every: must be positive");
  check(objective.k_mix >= 0.0 && objective.k_mix <= 1.0, "objective.k_mix: must lie in [0, 1]");
  check(objective.lambda_cap > 0.0 && std::isfinite(objective.lambda_cap),
        "objective.lambda_cap: must be positive and finite");
  check(objective.omega_train >= 1.0, "objective.omega_train: must be >= 1");
  check(objective.cond_dropout >= 0.0 && objective.cond_dropout < 1.0,
        "objective.cond_dropout: must lie in [0, 1)");
  try {
    sampler.validate();
  } catch (const std::exception& e) {
    errors.push_back(std::string("sampler: ") + e.what());
  }
  check(!eval.steps.empty(), "eval.steps: must not be empty");
  for (int s : eval.steps) check(s >= 1, "eval.steps: entries must be >= 1");
  check(eval.n_samples >= 2, "eval.n_samples: must be >= 2");
  check(eval.bootstrap >= 0, "eval.bootstrap: must be nonnegative");
  check(eval.eta >= 0.0 && eval.eta <= 1.0, "eval.eta: must lie in [0, 1]");
  check(eval.omega >= 1.0, "eval.omega: must be >= 1");
  check(eval.rho >= 0.0 && eval.rho <= 1.0, "eval.rho: must lie in [0, 1]");
  if (!errors.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<double> parse_doubles(const std::string& v, const std::string& key) {
  std::istringstream in(v);
  std::vector<double> out;
  double x;
  while (in >> x) out.push_back(x);
  if (!in.eof()) throw ConfigError(key + ": expected a list of numbers, got '" + v + "'");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Parser {
  std::map<std::string, std::pair<std::string, int>> kv;  // key -> (value, line)
  std::vector<std::string> consumed;

  bool has(const std::string& key) const { return kv.count(key) > 0; }

  bool take(const std::string& key, std::string* out) {
    auto it = kv.find(key);
    if (it == kv.end()) return false;
    *out = it->second.first;
    kv.erase(it);
    return true;
  }

  template <typename F>
  void opt(const std::string& key, F&& apply) {
    std::string v;
    if (take(key, &v)) apply(v);
  }

  void opt_double(const std::string& key, double* dst) {
    opt(key, [&](const std::string& v) {
      try {
        size_t used = 0;
        double x = std::stod(v, &used);
        if (trim(v.substr(used)) != "") throw std::invalid_argument("trailing");
        *dst = x;
      } catch (...) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
      }
    });
  }

  void opt_long(const std::string& key, long* dst) {
    opt(key, [&](const std::string& v) {
      try {
        size_t used = 0;
        long x = std::stol(v, &used);
        if (trim(v.substr(used)) != "") throw std::invalid_argument("trailing");
        *dst = x;
      } catch (...) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
      }
    });
  }

  void opt_int(const std::string& key, int* dst) {
    long tmp = *dst;
    opt_long(key, &tmp);
    *dst = static_cast<int>(tmp);
  }

  void opt_u64(const std::string& key, std::uint64_t* dst) {
    opt(key, [&](const std::string& v) {
      try {
        size_t used = 0;
        unsigned long long x = std::stoull(v, &used);
        if (trim(v.substr(used)) != "") throw std::invalid_argument("trailing");
        *dst = x;
      } catch (...) {
        throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
      }
    });
  }

  void opt_bool(const std::string& key, bool* dst) {
    opt(key, [&](const std::string& v) {
      if (v == "true") *dst = true;
      else if (v == "false") *dst = false;
      else throw ConfigError(key + ": expected true or false, got '" + v + "'");
    });
  }

  void opt_string(const std::string& key, std::string* dst) {
    opt(key, [&](const std::string& v) { *dst = v; });
  }
};

}  // namespace

RunConfig parse_config(const std::string& text) {
  Parser p;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (p.kv.count(key))
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    p.kv[key] = {value, lineno};
  }

  RunConfig cfg;
  p.opt_u64("seed", &cfg.seed);
  p.opt_string("out_dir", &cfg.out_dir);
  p.opt_string("dataset.preset", &cfg.dataset.preset);
  if (cfg.dataset.preset == "custom") {
    oracle::GmmCond& g = cfg.dataset.custom;
    long dim = 2;
    p.opt_long("dataset.custom.dim", &dim);
    g.dim = static_cast<int>(dim);
    p.opt("dataset.custom.priors", [&](const std::string& v) {
      g.priors = parse_doubles(v, "dataset.custom.priors");
    });
    for (int k = 0;; ++k) {
      std::string base = "dataset.custom.class" + std::to_string(k);
      if (!p.has(base + ".weights")) break;
      oracle::GmmClass cl;
      p.opt(base + ".weights",
            [&](const std::string& v) { cl.weights = parse_doubles(v, base + ".weights"); });
      p.opt(base + ".vars",
            [&](const std::string& v) { cl.vars = parse_doubles(v, base + ".vars"); });
      p.opt(base + ".means", [&](const std::string& v) {
        std::vector<std::vector<double>> pts;
        std::string rest = v;
        size_t pos;
        while (true) {
          pos = rest.find(';');
          std::string chunk = pos == std::string::npos ? rest : rest.substr(0, pos);
          std::vector<double> coords = parse_doubles(trim(chunk), base + ".means");
          if (!coords.empty()) pts.push_back(coords);
          if (pos == std::string::npos) break;
          rest = rest.substr(pos + 1);
        }
        cl.means.resize(static_cast<Eigen::Index>(pts.size()), g.dim);
        for (size_t i = 0; i < pts.size(); ++i) {
          if (static_cast<int>(pts[i].size()) != g.dim)
            throw ConfigError(base + ".means: point " + std::to_string(i) + " has wrong dimension");
          for (int dd = 0; dd < g.dim; ++dd) cl.means(static_cast<Eigen::Index>(i), dd) = pts[i][static_cast<size_t>(dd)];
        }
      });
      g.classes.push_back(std::move(cl));
    }
  }
  p.opt_int("model.hidden", &cfg.model_hidden);
  p.opt_int("model.depth", &cfg.model_depth);
  p.opt_int("model.cond_emb", &cfg.model_cond_emb);
  p.opt_int("model.time_features", &cfg.model_time_features);
  p.opt_double("schedule.t_min", &cfg.schedule_t_min);
  p.opt_int("schedule.warp_len", &cfg.schedule_warp_len);
  p.opt_double("schedule.p_equal", &cfg.schedule_p_equal);
  p.opt_double("schedule.tau_frac", &cfg.schedule_tau_frac);
  p.opt("trainer.mode", [&](const std::string& v) {
    if (v == "self_e") cfg.trainer.mode = TrainMode::SelfE;
    else if (v == "flow_matching_baseline") cfg.trainer.mode = TrainMode::FlowMatchingBaseline;
    else throw ConfigError("trainer.mode: expected self_e or flow_matching_baseline, got '" + v + "'");
  });
  p.opt_long("trainer.total_iters", &cfg.trainer.total_iters);
  p.opt_long("trainer.warmup_iters", &cfg.trainer.warmup_iters);
  p.opt_double("trainer.lr_start", &cfg.trainer.lr_start);
  p.opt_double("trainer.lr_end", &cfg.trainer.lr_end);
  p.opt_double("trainer.aux_start_frac", &cfg.trainer.aux_start_frac);
  p.opt_int("trainer.batch_size", &cfg.trainer.batch_size);
  p.opt_double("trainer.ema_decay", &cfg.trainer_ema_decay);
  p.opt_double("trainer.grad_clip", &cfg.trainer_grad_clip);
  p.opt_long("trainer.checkpoint_every", &cfg.trainer_checkpoint_every);
  p.opt_long("trainer.metrics_every", &cfg.trainer_metrics_every);
  p.opt("trainer.precision", [&](const std::string& v) {
    if (v == "f32") cfg.trainer_precision = Precision::F32;
    else if (v == "f64") cfg.trainer_precision = Precision::F64;
    else throw ConfigError("trainer.precision: expected f32 or f64, got '" + v + "'");
  });
  p.opt_double("objective.omega_train", &cfg.objective.omega_train);
  bool k_given = p.has("objective.k_mix");
  p.opt_double("objective.k_mix", &cfg.objective.k_mix);
  if (!k_given)
    cfg.objective.k_mix = (cfg.objective.omega_train - 1.0) / cfg.objective.omega_train;
  p.opt_bool("objective.aux_enabled", &cfg.objective.aux_enabled);
  p.opt_bool("objective.renorm_enabled", &cfg.objective.renorm_enabled);
  p.opt_double("objective.lambda_cap", &cfg.objective.lambda_cap);
  p.opt_double("objective.cond_dropout", &cfg.objective.cond_dropout);
  p.opt_bool("objective.ema_split", &cfg.objective.ema_split);
  p.opt_int("sampler.n_steps", &cfg.sampler.n_steps);
  p.opt_double("sampler.eta", &cfg.sampler.eta);
  p.opt_double("sampler.omega", &cfg.sampler.omega);
  p.opt("sampler.guidance", [&](const std::string& v) { cfg.sampler.guidance = parse_guidance_mode(v); });
  p.opt_double("sampler.rho", &cfg.sampler.rho);
  p.opt("eval.steps", [&](const std::string& v) {
    std::vector<double> xs = parse_doubles(v, "eval.steps");
    cfg.eval.steps.clear();
    for (double x : xs) cfg.eval.steps.push_back(static_cast<int>(x));
  });
  p.opt_int("eval.n_samples", &cfg.eval.n_samples);
  p.opt_int("eval.bootstrap", &cfg.eval.bootstrap);
  p.opt_bool("eval.use_ema", &cfg.eval.use_ema);
  p.opt_double("eval.eta", &cfg.eval.eta);
  p.opt_double("eval.omega", &cfg.eval.omega);
  p.opt("eval.guidance", [&](const std::string& v) { cfg.eval.guidance = parse_guidance_mode(v); });
  p.opt_double("eval.rho", &cfg.eval.rho);

  if (!p.kv.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& [k, v] : p.kv)
      msg += "\n  line " + std::to_string(v.second) + ": '" + k + "'";
    throw ConfigError(msg);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream o;
  o << "seed = " << cfg.seed << "\n";
  o << "out_dir = " << cfg.out_dir << "\n";
  o << "dataset.preset = " << cfg.dataset.preset << "\n";
  if (cfg.dataset.preset == "custom") {
    const auto& g = cfg.dataset.custom;
    o << "dataset.custom.dim = " << g.dim << "\n";
    o << "dataset.custom.priors =";
    for (double v : g.priors) o << " " << fmt(v);
    o << "\n";
    for (size_t k = 0; k < g.classes.size(); ++k) {
      const auto& cl = g.classes[k];
      o << "dataset.custom.class" << k << ".weights =";
      for (double v : cl.weights) o << " " << fmt(v);
      o << "\n";
      o << "dataset.custom.class" << k << ".means = ";
      for (Eigen::Index i = 0; i < cl.means.rows(); ++i) {
        if (i) o << " ; ";
        for (int dd = 0; dd < g.dim; ++dd) o << (dd ? " " : "") << fmt(cl.means(i, dd));
      }
      o << "\n";
      o << "dataset.custom.class" << k << ".vars =";
      for (double v : cl.vars) o << " " << fmt(v);
      o << "\n";
    }
  }
  o << "model.hidden = " << cfg.model_hidden << "\n";
  o << "model.depth = " << cfg.model_depth << "\n";
  o << "model.cond_emb = " << cfg.model_cond_emb << "\n";
  o << "model.time_features = " << cfg.model_time_features << "\n";
  o << "schedule.t_min = " << fmt(cfg.schedule_t_min) << "\n";
  o << "schedule.warp_len = " << cfg.schedule_warp_len << "\n";
  o << "schedule.p_equal = " << fmt(cfg.schedule_p_equal) << "\n";
  o << "schedule.tau_frac = " << fmt(cfg.schedule_tau_frac) << "\n";
  o << "trainer.mode = "
    << (cfg.trainer.mode == TrainMode::SelfE ? "self_e" : "flow_matching_baseline") << "\n";
  o << "trainer.total_iters = " << cfg.trainer.total_iters << "\n";
  o << "trainer.warmup_iters = " << cfg.trainer.warmup_iters << "\n";
  o << "trainer.lr_start = " << fmt(cfg.trainer.lr_start) << "\n";
  o << "trainer.lr_end = " << fmt(cfg.trainer.lr_end) << "\n";
  o << "trainer.aux_start_frac = " << fmt(cfg.trainer.aux_start_frac) << "\n";
  o << "trainer.batch_size = " << cfg.trainer.batch_size << "\n";
  o << "trainer.ema_decay = " << fmt(cfg.trainer_ema_decay) << "\n";
  o << "trainer.grad_clip = " << fmt(cfg.trainer_grad_clip) << "\n";
  o << "trainer.checkpoint_every = " << cfg.trainer_checkpoint_every << "\n";
  o << "trainer.metrics_every = " << cfg.trainer_metrics_every << "\n";
  o << "trainer.precision = " << (cfg.trainer_precision == Precision::F32 ? "f32" : "f64") << "\n";
  o << "objective.omega_train = " << fmt(cfg.objective.omega_train) << "\n";
  o << "objective.k_mix = " << fmt(cfg.objective.k_mix) << "\n";
  o << "objective.aux_enabled = " << (cfg.objective.aux_enabled ? "true" : "false") << "\n";
  o << "objective.renorm_enabled = " << (cfg.objective.renorm_enabled ? "true" : "false") << "\n";
  o << "objective.lambda_cap = " << fmt(cfg.objective.lambda_cap) << "\n";
  o << "objective.cond_dropout = " << fmt(cfg.objective.cond_dropout) << "\n";
  o << "objective.ema_split = " << (cfg.objective.ema_split ? "true" : "false") << "\n";
  o << "sampler.n_steps = " << cfg.sampler.n_steps << "\n";
  o << "sampler.eta = " << fmt(cfg.sampler.eta) << "\n";
  o << "sampler.omega = " << fmt(cfg.sampler.omega) << "\n";
  o << "sampler.guidance = " << guidance_mode_name(cfg.sampler.guidance) << "\n";
  o << "sampler.rho = " << fmt(cfg.sampler.rho) << "\n";
  o << "eval.steps =";
  for (int s : cfg.eval.steps) o << " " << s;
  o << "\n";
  o << "eval.n_samples = " << cfg.eval.n_samples << "\n";
  o << "eval.bootstrap = " << cfg.eval.bootstrap << "\n";
  o << "eval.use_ema = " << (cfg.eval.use_ema ? "true" : "false") << "\n";
  o << "eval.eta = " << fmt(cfg.eval.eta) << "\n";
  o << "eval.omega = " << fmt(cfg.eval.omega) << "\n";
  o << "eval.guidance = " << guidance_mode_name(cfg.eval.guidance) << "\n";
  o << "eval.rho = " << fmt(cfg.eval.rho) << "\n";
  return o.str();
}

void save_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file: " + path);
  out << serialize_config(cfg);
}

std::string config_hash(const RunConfig& cfg) {
  std::string s = serialize_config(cfg);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace selfe
