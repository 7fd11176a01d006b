/* include/ivcal/ivcal.h */

/* Copyright 2026 The ivcal Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

/* C interface of libivcal. Objects are opaque handles owned by the caller
 * and released with the matching _free function. Every fallible call
 * returns an ivc_status; on failure ivc_last_error() describes the problem
 * (the text is per thread and valid until the next failing call on that
 * thread). Status values equal the command-line exit codes. */

#ifndef IVCAL_IVCAL_H_
#define IVCAL_IVCAL_H_

#include <stddef.h>
#include <stdint.h>

#if defined(IVCAL_BUILDING_LIBRARY)
#define IVCAL_API __attribute__((visibility("default")))
#else
#define IVCAL_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  IVC_OK = 0,
  IVC_ERR_USAGE = 2,   /* bad arguments or configuration */
  IVC_ERR_DATA = 3,    /* malformed or inconsistent input files */
  IVC_ERR_NUMERIC = 4, /* factorization failure, degenerate component */
  IVC_ERR_INTERNAL = 5 /* anything else, e.g. out of memory */
} ivc_status;

typedef struct ivc_dataset ivc_dataset;
typedef struct ivc_model ivc_model;

/* Receives one progress line (no trailing newline). */
typedef void (*ivc_log_fn)(void *user, const char *line);

IVCAL_API const char *ivc_version(void);
IVCAL_API const char *ivc_last_error(void);
IVCAL_API void ivc_string_free(char *s);

/* Threading for one call. num_threads = 0 uses all hardware threads;
 * reproducible != 0 fixes the reduction order so results do not depend on
 * the thread count. */
typedef struct {
  int num_threads;
  int reproducible;
} ivc_parallel;

IVCAL_API void ivc_parallel_init(ivc_parallel *p);

/* ---- datasets ---- */

typedef enum {
  IVC_POSTERIORS_IGNORE = 0,
  IVC_POSTERIORS_IF_PRESENT = 1,
  IVC_POSTERIORS_REQUIRE = 2
} ivc_posterior_policy;

IVCAL_API ivc_status ivc_dataset_load(const char *manifest_path, int posterior_policy,
                                      ivc_dataset **out);
IVCAL_API void ivc_dataset_free(ivc_dataset *ds);
IVCAL_API size_t ivc_dataset_num_segments(const ivc_dataset *ds);
IVCAL_API const char *ivc_dataset_segment_id(const ivc_dataset *ds, size_t index);
IVCAL_API int ivc_dataset_has_posteriors(const ivc_dataset *ds);
IVCAL_API double ivc_dataset_total_frames(const ivc_dataset *ds);

/* ---- models ---- */

IVCAL_API ivc_status ivc_model_load(const char *dir, ivc_model **out);
IVCAL_API ivc_status ivc_model_save(const ivc_model *model, const char *dir);
IVCAL_API void ivc_model_free(ivc_model *model);
IVCAL_API void ivc_model_dims(const ivc_model *model, int *num_components, int *feat_dim,
                              int *ivector_dim);
IVCAL_API const char *ivc_model_recipe(const ivc_model *model);
IVCAL_API int ivc_model_uses_posteriors(const ivc_model *model);
IVCAL_API int ivc_model_has_calibration(const ivc_model *model);
/* Number of alpha values (1 or N); 0 without calibration. */
IVCAL_API int ivc_model_alpha_size(const ivc_model *model);
/* Copies alpha (ivc_model_alpha_size values) and beta (N values). */
IVCAL_API ivc_status ivc_model_calibration(const ivc_model *model, double *alpha, double *beta);

/* ---- synthetic data ---- */

typedef struct {
  int num_components;
  int feat_dim;
  int ivector_dim;
  int full_covariance;
  int num_segments;
  int frames_per_segment;
  uint64_t seed;
  const char *posteriors; /* "none", "truth", "noisy" or "planted" */
  double temperature;
  double planted_alpha;
  double planted_beta_scale;
  int force;
} ivc_synth_options;

IVCAL_API void ivc_synth_options_init(ivc_synth_options *opts);
IVCAL_API ivc_status ivc_synth(const ivc_synth_options *opts, const char *out_dir);

/* ---- UBM training ---- */

typedef struct {
  int num_components;
  int iterations;
  uint64_t seed;
  int full_covariance;
  int ivector_dim; /* width of the zero loadings stored with the UBM */
  double floor_abs;
  double floor_frac;
  int reseed_empty; /* reseed degenerate components instead of failing */
  ivc_parallel parallel;
  ivc_log_fn log;
  void *log_user;
} ivc_ubm_options;

IVCAL_API void ivc_ubm_options_init(ivc_ubm_options *opts);
IVCAL_API ivc_status ivc_train_ubm(const ivc_dataset *ds, const ivc_ubm_options *opts,
                                   ivc_model **out);

/* ---- extractor training ---- */

typedef struct {
  const char *recipe; /* classical, phonetic, phonetic-joint, calibrated */
  int iterations;
  int ivector_dim;
  int update_u; /* -1: recipe default */
  int update_weights;
  double min_improvement;
  uint64_t seed;
  double init_scale; /* <= 0: default */
  int keep_loadings;
  int full_covariance;
  double floor_abs;
  double floor_frac;
  int diagonal_alpha;
  int calibration_warm_start;
  int calib_max_iterations;
  double calib_grad_tol;
  int calib_history;
  ivc_parallel parallel;
  ivc_log_fn log;
  void *log_user;
} ivc_train_options;

IVCAL_API void ivc_train_options_init(ivc_train_options *opts);
/* init may be NULL except for the classical recipe. *report_json, when
 * report_json is not NULL, receives the training report; free it with
 * ivc_string_free. */
IVCAL_API ivc_status ivc_train(const ivc_dataset *ds, const ivc_model *init,
                               const ivc_train_options *opts, ivc_model **out,
                               char **report_json);

/* ---- extraction and diagnostics ---- */

IVCAL_API ivc_status ivc_extract(const ivc_dataset *ds, const ivc_model *model,
                                 const ivc_parallel *parallel, const char *out_path,
                                 int with_covariance, int binary);

/* per_segment may be NULL; otherwise it has ivc_dataset_num_segments entries. */
IVCAL_API ivc_status ivc_elbo(const ivc_dataset *ds, const ivc_model *model,
                              const ivc_parallel *parallel, double *per_segment,
                              double *total);

typedef struct {
  int max_iterations;
  double grad_tol;
  int history;
  int diagonal_alpha;
  ivc_parallel parallel;
} ivc_calib_options;

typedef struct {
  double objective_before;
  double objective_after;
  double elbo_before; /* at fixed U, T and Q(x) */
  double elbo_after;
  int iterations;
  int converged;
  double mean_entropy_before;
  double mean_entropy_after;
} ivc_calib_result;

IVCAL_API void ivc_calib_options_init(ivc_calib_options *opts);
/* Updates the model's calibration in place. */
IVCAL_API ivc_status ivc_calibrate(const ivc_dataset *ds, ivc_model *model,
                                   const ivc_calib_options *opts, ivc_calib_result *result);

#ifdef __cplusplus
}
#endif

#endif /* IVCAL_IVCAL_H_ */
