#include "selfe/selfe.h"

#include <cstdlib>
#include <cstring>
#include <sstream>

#include "commands.hpp"
#include "config.hpp"
#include "runio.hpp"
#include "trainer.hpp"
#include "verify.hpp"

struct selfe_config {
  selfe::RunConfig cfg;
};

namespace {

thread_local std::string g_last_error = "";

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

selfe_status fail(selfe_status code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

// Translate exceptions from the C++ core into status codes.
template <typename F>
selfe_status guarded(F&& f) {
  try {
    return f();
  } catch (const selfe::ConfigError& e) {
    return fail(SELFE_ERR_CONFIG, e.what());
  } catch (const selfe::LockedError& e) {
    return fail(SELFE_ERR_LOCKED, e.what());
  } catch (const selfe::MissingCheckpointError& e) {
    return fail(SELFE_ERR_MISSING_CHECKPOINT, e.what());
  } catch (const selfe::IoError& e) {
    return fail(SELFE_ERR_IO, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(SELFE_ERR_INVALID_ARG, e.what());
  } catch (const std::domain_error& e) {
    return fail(SELFE_ERR_INVALID_ARG, e.what());
  } catch (const std::exception& e) {
    return fail(SELFE_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(SELFE_ERR_INTERNAL, "unknown error");
  }
}

std::filesystem::path resolve_dir(const char* dir, const std::string& fallback) {
  std::filesystem::path p = dir && *dir ? dir : fallback;
  if (p.is_relative()) {
    if (const char* root = std::getenv("SELFE_OUT_ROOT"); root && *root)
      p = std::filesystem::path(root) / p;
  }
  return p;
}

}  // namespace

extern "C" {

const char* selfe_version(void) { return "selfe 1.0.0"; }

const char* selfe_last_error(void) { return g_last_error.c_str(); }

void selfe_free(void* ptr) { std::free(ptr); }

selfe_status selfe_config_create(selfe_config** out) {
  if (!out) return fail(SELFE_ERR_INVALID_ARG, "out is NULL");
  return guarded([&] {
    *out = new selfe_config{selfe::RunConfig{}};
    return SELFE_OK;
  });
}

selfe_status selfe_config_load(const char* path, selfe_config** out) {
  if (!path || !out) return fail(SELFE_ERR_INVALID_ARG, "path/out is NULL");
  return guarded([&] {
    *out = new selfe_config{selfe::load_config(path)};
    return SELFE_OK;
  });
}

selfe_status selfe_config_parse(const char* text, selfe_config** out) {
  if (!text || !out) return fail(SELFE_ERR_INVALID_ARG, "text/out is NULL");
  return guarded([&] {
    *out = new selfe_config{selfe::parse_config(text)};
    return SELFE_OK;
  });
}

selfe_status selfe_config_set(selfe_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) return fail(SELFE_ERR_INVALID_ARG, "cfg/key/value is NULL");
  return guarded([&] {
    std::string text = selfe::serialize_config(cfg->cfg);
    std::istringstream in(text);
    std::ostringstream rebuilt;
    std::string line;
    std::string prefix = std::string(key) + " ";
    bool replaced = false;
    while (std::getline(in, line)) {
      if (!replaced && line.rfind(prefix, 0) == 0 && line.find('=') != std::string::npos) {
        rebuilt << key << " = " << value << "\n";
        replaced = true;
      } else {
        rebuilt << line << "\n";
      }
    }
    if (!replaced) rebuilt << key << " = " << value << "\n";
    cfg->cfg = selfe::parse_config(rebuilt.str());
    return SELFE_OK;
  });
}

selfe_status selfe_config_serialize(const selfe_config* cfg, char** out_text) {
  if (!cfg || !out_text) return fail(SELFE_ERR_INVALID_ARG, "cfg/out_text is NULL");
  return guarded([&] {
    *out_text = dup_string(selfe::serialize_config(cfg->cfg));
    return SELFE_OK;
  });
}

void selfe_config_free(selfe_config* cfg) { delete cfg; }

selfe_status selfe_train(const selfe_config* cfg, const char* run_dir) {
  if (!cfg) return fail(SELFE_ERR_INVALID_ARG, "cfg is NULL");
  return guarded([&] {
    auto dir = resolve_dir(run_dir, cfg->cfg.out_dir);
    selfe::RunRecord rec = selfe::train_run(cfg->cfg, dir);
    if (rec.status != "completed") return fail(SELFE_ERR_DIVERGED, rec.reason);
    return SELFE_OK;
  });
}

selfe_status selfe_eval(const char* run_dir, const int* steps, int n_steps, int n_samples,
                        unsigned long long seed, const char* out_dir) {
  if (!run_dir) return fail(SELFE_ERR_INVALID_ARG, "run_dir is NULL");
  return guarded([&] {
    selfe::EvalOptions opt;
    if (steps && n_steps > 0) opt.steps.assign(steps, steps + n_steps);
    opt.n_samples = n_samples;
    if (seed != 0) opt.seed = seed;
    if (out_dir && *out_dir) opt.out_dir = resolve_dir(out_dir, out_dir);
    selfe::run_eval(resolve_dir(run_dir, run_dir), opt);
    return SELFE_OK;
  });
}

selfe_status selfe_sweep(const char* run_dir, const char* axis, const double* values,
                         int n_values, const char* out_dir) {
  if (!run_dir || !axis) return fail(SELFE_ERR_INVALID_ARG, "run_dir/axis is NULL");
  return guarded([&] {
    std::vector<double> vals;
    if (values && n_values > 0) vals.assign(values, values + n_values);
    selfe::EvalOptions opt;
    if (out_dir && *out_dir) opt.out_dir = resolve_dir(out_dir, out_dir);
    selfe::run_sweep(resolve_dir(run_dir, run_dir), axis, vals, opt);
    return SELFE_OK;
  });
}

selfe_status selfe_verify(int* out_failures, char** out_report) {
  if (!out_failures) return fail(SELFE_ERR_INVALID_ARG, "out_failures is NULL");
  return guarded([&] {
    auto results = selfe::verify::run_all();
    std::string report;
    *out_failures = selfe::verify::print_report(results, &report);
    if (out_report) *out_report = dup_string(report);
    return SELFE_OK;
  });
}

selfe_status selfe_sample(const char* run_dir, int condition, int n, int steps, double eta,
                          double omega, const char* guidance, double rho,
                          unsigned long long seed, int use_ema, double** out_points,
                          int* out_dim) {
  if (!run_dir || !out_points || !out_dim)
    return fail(SELFE_ERR_INVALID_ARG, "run_dir/out_points/out_dim is NULL");
  return guarded([&] {
    selfe::GuidanceMode mode = selfe::parse_guidance_mode(guidance ? guidance : "off");
    selfe::MatXd pts = selfe::run_sample(resolve_dir(run_dir, run_dir), condition, n, steps, eta,
                                         omega, mode, rho, seed, use_ema != 0);
    auto* buf = static_cast<double*>(std::malloc(sizeof(double) * static_cast<size_t>(pts.size())));
    for (Eigen::Index i = 0; i < pts.rows(); ++i)
      for (Eigen::Index j = 0; j < pts.cols(); ++j)
        buf[i * pts.cols() + j] = pts(i, j);
    *out_points = buf;
    *out_dim = static_cast<int>(pts.cols());
    return SELFE_OK;
  });
}

}  // extern "C"
