/* C interface to the jsrl scheduling toolkit.
 *
 * Every function returns a jsrl_status; on failure jsrl_last_error() holds a
 * message for the calling thread until its next jsrl call. Objects are opaque
 * and owned by the caller once created; release them with the matching _free.
 * Strings returned through char** are released with jsrl_string_free. */
#ifndef JSRL_C_API_H
#define JSRL_C_API_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define JSRL_API __declspec(dllexport)
#else
#define JSRL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  JSRL_OK = 0,
  JSRL_ERR_PARAMETER = 1, /* bad argument value, unknown setting */
  JSRL_ERR_PARSE = 2,     /* malformed instance, config, reference or checkpoint text */
  JSRL_ERR_IO = 3,
  JSRL_ERR_TRAINING = 4, /* non-finite loss or gradient */
  JSRL_ERR_CONTRACT = 5, /* infeasible schedule or misuse of an object */
  JSRL_ERR_INTERNAL = 6
} jsrl_status;

typedef enum { JSRL_JSSP = 0, JSRL_FJSP = 1 } jsrl_problem;

typedef struct jsrl_instance jsrl_instance;
typedef struct jsrl_run jsrl_run;
typedef struct jsrl_checkpoint jsrl_checkpoint;
typedef struct jsrl_eval_set jsrl_eval_set;
typedef struct jsrl_report jsrl_report;

JSRL_API const char* jsrl_version(void);
JSRL_API const char* jsrl_last_error(void);
JSRL_API void jsrl_string_free(char* s);
/* Child seed `index` of `seed` (the stream split used for instance sets). */
JSRL_API uint64_t jsrl_derive_seed(uint64_t seed, uint64_t index);

/* ---- instances ---- */

typedef struct {
  int jobs;
  int machines;
  int operations;
  int is_jssp;
  double initial_estimate; /* C(S_0), the makespan estimate of the empty schedule */
} jsrl_instance_info;

/* Generator defaults: JSSP times in [1, 99]; FJSP operation counts from the machine count. */
JSRL_API jsrl_status jsrl_instance_generate(jsrl_problem problem, int jobs, int machines, uint64_t seed,
                                            jsrl_instance** out);
JSRL_API jsrl_status jsrl_instance_parse(const char* text, jsrl_problem problem, jsrl_instance** out);
JSRL_API jsrl_status jsrl_instance_load(const char* path, jsrl_problem problem, jsrl_instance** out);
JSRL_API jsrl_status jsrl_instance_save(const jsrl_instance* inst, const char* path, jsrl_problem format);
JSRL_API jsrl_status jsrl_instance_describe(const jsrl_instance* inst, jsrl_instance_info* out);
JSRL_API void jsrl_instance_free(jsrl_instance* inst);

/* ---- run configuration and training ---- */

/* A run is a set of key=value settings (config-file keys). Each set call is
 * checked against the settings so far; later values replace earlier ones. */
JSRL_API jsrl_status jsrl_run_create(jsrl_run** out);
JSRL_API jsrl_status jsrl_run_set(jsrl_run* run, const char* key, const char* value);
/* Merges a flat key=value config file. */
JSRL_API jsrl_status jsrl_run_load(jsrl_run* run, const char* path);
/* Full resolved settings as config-file text. */
JSRL_API jsrl_status jsrl_run_settings(const jsrl_run* run, char** text);
JSRL_API void jsrl_run_free(jsrl_run* run);

typedef struct {
  int episode; /* 1-based */
  double loss; /* NaN without a gradient step */
  double epsilon; /* NaN for policy-gradient runs */
  double validation_makespan; /* NaN between validations */
  double seconds;
} jsrl_episode_row;

typedef void (*jsrl_progress_fn)(const jsrl_episode_row* row, void* user);

typedef struct {
  int episodes;
  int best_episode;
  double first_validation;
  double best_validation;
  double seconds;
} jsrl_train_summary;

/* Trains per the run settings; writes best.ckpt, metrics.csv and validation.csv
 * under the run's out_dir when it is set. On JSRL_ERR_TRAINING the files hold
 * everything up to the failure. */
JSRL_API jsrl_status jsrl_train(const jsrl_run* run, jsrl_progress_fn progress, void* user,
                                jsrl_train_summary* summary, jsrl_checkpoint** best);

/* ---- checkpoints ---- */

JSRL_API jsrl_status jsrl_checkpoint_load(const char* path, jsrl_checkpoint** out);
JSRL_API jsrl_status jsrl_checkpoint_save(const jsrl_checkpoint* ckpt, const char* path);
/* Settings and metadata as key=value lines, plus the parameter count. */
JSRL_API jsrl_status jsrl_checkpoint_describe(const jsrl_checkpoint* ckpt, char** text);
JSRL_API void jsrl_checkpoint_free(jsrl_checkpoint* ckpt);

/* ---- evaluation ---- */

JSRL_API jsrl_status jsrl_eval_set_create(const char* name, jsrl_eval_set** out);
/* Takes a copy of the instance. */
JSRL_API jsrl_status jsrl_eval_set_add(jsrl_eval_set* set, const char* instance_name, const jsrl_instance* inst);
/* Adds every regular file of `dir` (sorted by name) parsed as `problem`, named by file stem. */
JSRL_API jsrl_status jsrl_eval_set_add_dir(jsrl_eval_set* set, const char* dir, jsrl_problem problem);
/* Reference CSV: instance_name,reference_makespan with an optional header. */
JSRL_API jsrl_status jsrl_eval_set_load_refs(jsrl_eval_set* set, const char* path);
JSRL_API jsrl_status jsrl_eval_set_size(const jsrl_eval_set* set, size_t* out);
JSRL_API void jsrl_eval_set_free(jsrl_eval_set* set);

/* Greedy decoding, or one greedy rollout per initial action when `multistart`. */
JSRL_API jsrl_status jsrl_evaluate(const jsrl_checkpoint* ckpt, const jsrl_eval_set* set, int multistart,
                                   int workers, jsrl_report** out);

/* Scores makespans produced elsewhere (one per instance, in set order) against the
 * set's references. No schedules are attached, so nothing is feasibility-checked. */
JSRL_API jsrl_status jsrl_report_external(const jsrl_eval_set* set, const char* algorithm, const double* makespans,
                                          size_t count, jsrl_report** out);
/* Instance name `index` of the set (owned by the set). */
JSRL_API jsrl_status jsrl_eval_set_name_at(const jsrl_eval_set* set, size_t index, const char** out);

typedef struct {
  const char* instance; /* owned by the report */
  double makespan;
  double reference; /* NaN without a reference */
  double gap_pct;   /* NaN without a reference */
  double seconds;
  int starts; /* rollouts; 0 for external results */
} jsrl_report_row;

JSRL_API jsrl_status jsrl_report_size(const jsrl_report* report, size_t* out);
JSRL_API jsrl_status jsrl_report_row_at(const jsrl_report* report, size_t index, jsrl_report_row* out);
JSRL_API jsrl_status jsrl_report_means(const jsrl_report* report, double* mean_makespan, double* mean_gap_pct);
/* Overrides the algorithm label (defaults to the checkpoint's). */
JSRL_API jsrl_status jsrl_report_set_label(jsrl_report* report, const char* algorithm);
JSRL_API jsrl_status jsrl_report_csv(const jsrl_report* report, char** text);
JSRL_API void jsrl_report_free(jsrl_report* report);

/* eval_<set>.csv, summary.csv, significance.csv and validation_curves.csv under out_dir.
 * `metrics_csv` (may be NULL) are metrics.csv files whose validation rows feed the curves. */
JSRL_API jsrl_status jsrl_emit_report(const jsrl_report* const* reports, size_t count, const char* const* metrics_csv,
                                      size_t metrics_count, const char* out_dir);

/* ---- statistics ---- */

JSRL_API jsrl_status jsrl_gap(double makespan, double reference, double* out);

typedef struct {
  double statistic; /* min(W+, W-) */
  double w_plus;
  double p_value;
  int significant;
  int indeterminate;
  int exact;
  int n; /* non-zero differences */
} jsrl_wilcoxon_result;

JSRL_API jsrl_status jsrl_wilcoxon(const double* a, const double* b, size_t n, double level,
                                   jsrl_wilcoxon_result* out);

#ifdef __cplusplus
}
#endif

#endif
