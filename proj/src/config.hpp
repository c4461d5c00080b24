#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "backbone.hpp"
#include "objective.hpp"
#include "oracle.hpp"
#include "sampler.hpp"
#include "schedule.hpp"

namespace selfe {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const char* guidance_mode_name(GuidanceMode m);
GuidanceMode parse_guidance_mode(const std::string& s);

enum class TrainMode { SelfE, FlowMatchingBaseline };
enum class Precision { F32, F64 };

/// Training-run shape: iteration budget, learning-rate ramp, stage switch.
struct TrainPlan {
  long total_iters = 20000;
  long warmup_iters = 500;
  double lr_start = 3e-4;
  double lr_end = 1e-5;
  double aux_start_frac = 0.77;
  int batch_size = 256;
  TrainMode mode = TrainMode::SelfE;
};

struct DatasetSpec {
  std::string preset = "gmm-4class";
  oracle::GmmCond custom;  // used when preset == "custom"

  oracle::GmmCond resolve() const;
};

struct EvalSpec {
  std::vector<int> steps{1, 2, 4, 8, 32};
  int n_samples = 512;
  int bootstrap = 200;
  bool use_ema = true;
  // Fidelity metrics default to unguided sampling; guidance intentionally
  // sharpens the conditional away from the data distribution.
  double eta = 1.0;
  double omega = 1.0;
  GuidanceMode guidance = GuidanceMode::Off;
  double rho = 0.0;
};

/// Full run configuration; one flat key = value file with dotted sections.
/// Unknown keys are rejected at parse time.
struct RunConfig {
  std::uint64_t seed = 42;
  std::string out_dir = "runs/selfe";
  DatasetSpec dataset;
  int model_hidden = 128;
  int model_depth = 3;
  int model_cond_emb = 64;
  int model_time_features = 32;
  double schedule_t_min = 1e-3;
  int schedule_warp_len = 1;
  double schedule_p_equal = 0.5;
  double schedule_tau_frac = 0.3;  // fraction of total_iters for the s anneal
  TrainPlan trainer;
  double trainer_ema_decay = 0.9999;
  double trainer_grad_clip = 0.0;  // 0 = off
  long trainer_checkpoint_every = 2000;
  long trainer_metrics_every = 50;
  Precision trainer_precision = Precision::F32;
  ObjectiveConfig objective;
  SamplerConfig sampler;
  EvalSpec eval;

  ScheduleSpec schedule_spec() const;
  NetworkConfig network_config() const;
  void validate() const;  // throws ConfigError with field-level messages
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& cfg);
void save_config(const RunConfig& cfg, const std::string& path);

/// FNV-1a over the canonical serialization, as a 16-hex-digit string.
std::string config_hash(const RunConfig& cfg);

}  // namespace selfe
