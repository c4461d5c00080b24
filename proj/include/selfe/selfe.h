/* selfe: any-step conditional generative modeling on synthetic 2-D
 * distributions -- self-evaluating training, flow-matching baseline,
 * closed-form mixture oracles, DDIM-eta sampling, and sample-quality
 * evaluation, behind a C interface with opaque handles and status codes.
 *
 * All functions returning selfe_status set a thread-local message readable
 * via selfe_last_error() on failure. Strings and buffers returned through
 * out-parameters are owned by the caller and released with selfe_free().
 */
#ifndef SELFE_H
#define SELFE_H

#ifdef __cplusplus
extern "C" {
#endif

typedef enum selfe_status {
  SELFE_OK = 0,
  SELFE_ERR_INTERNAL = 1,
  SELFE_ERR_CONFIG = 2,             /* invalid or unparsable configuration */
  SELFE_ERR_DIVERGED = 3,           /* training aborted on non-finite loss */
  SELFE_ERR_MISSING_CHECKPOINT = 4, /* no usable checkpoint in the run dir */
  SELFE_ERR_INVALID_ARG = 5,
  SELFE_ERR_IO = 6,
  SELFE_ERR_LOCKED = 7 /* run directory held by another command */
} selfe_status;

/* Opaque run configuration (key = value text with dotted sections). */
typedef struct selfe_config selfe_config;

const char* selfe_version(void);

/* Message for the most recent failure on this thread; never NULL. */
const char* selfe_last_error(void);

/* Release any string or buffer returned by this library. */
void selfe_free(void* ptr);

/* -- configuration ------------------------------------------------------ */

selfe_status selfe_config_create(selfe_config** out);
selfe_status selfe_config_load(const char* path, selfe_config** out);
selfe_status selfe_config_parse(const char* text, selfe_config** out);

/* Set one key; the updated configuration is re-validated immediately.
 * Multi-key edits (e.g. a custom dataset) are better expressed as a full
 * config text passed to selfe_config_parse. */
selfe_status selfe_config_set(selfe_config* cfg, const char* key, const char* value);

/* Canonical serialization (parse(serialize(c)) == c). */
selfe_status selfe_config_serialize(const selfe_config* cfg, char** out_text);

void selfe_config_free(selfe_config* cfg);

/* -- commands ------------------------------------------------------------ */

/* Train into run_dir (NULL: the config's out_dir). Relative directories are
 * resolved against $SELFE_OUT_ROOT when that variable is set. Writes
 * config.snapshot, metrics.csv, checkpoints/ and sample dumps; returns
 * SELFE_ERR_DIVERGED when the run aborts on a non-finite loss (the last
 * checkpoint is retained). */
selfe_status selfe_train(const selfe_config* cfg, const char* run_dir);

/* Evaluate the latest checkpoint of a completed run against the exact
 * mixture: Wasserstein-2 and energy distance per (condition, step count).
 * steps may be NULL (use the run config's eval.steps); n_samples <= 0 and
 * seed == 0 likewise fall back to the run config. Writes report.csv,
 * plot_w2_vs_steps.csv and summary.txt under out_dir (NULL: <run_dir>/eval). */
selfe_status selfe_eval(const char* run_dir, const int* steps, int n_steps, int n_samples,
                        unsigned long long seed, const char* out_dir);

/* Comparative evaluation across one sampler axis:
 * "s_strategy" | "eta" | "omega" | "steps". values may be NULL to use the
 * default axis values. Writes sweep_<axis>.csv under out_dir
 * (NULL: <run_dir>/sweep). */
selfe_status selfe_sweep(const char* run_dir, const char* axis, const double* values,
                         int n_values, const char* out_dir);

/* Run the self-contained property suite (schedule identities, Tweedie
 * round-trip, the posterior-mean gradient identities, finite-difference
 * gradient checks, DDIM/Euler equivalence, renormalization, metric axioms).
 * *out_failures receives the number of failing properties; *out_report (may
 * be NULL) receives the one-line-per-property report. */
selfe_status selfe_verify(int* out_failures, char** out_report);

/* Draw n samples at the given condition and step count from a trained run.
 * guidance is "off" | "standard" | "energy_preserving". On success
 * *out_points holds n * (*out_dim) doubles, row-major. */
selfe_status selfe_sample(const char* run_dir, int condition, int n, int steps, double eta,
                          double omega, const char* guidance, double rho,
                          unsigned long long seed, int use_ema, double** out_points,
                          int* out_dim);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* SELFE_H */
