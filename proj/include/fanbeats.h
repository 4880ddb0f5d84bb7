/* Copyright 2026 The fanbeats Authors.
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

/* C interface to libfanbeats.
 *
 * Every function returns an fb_status. On failure the message is available
 * from fb_last_error() on the calling thread until the next failing call.
 * Strings returned by the library are owned by the handle they came from.
 */

#ifndef FANBEATS_H
#define FANBEATS_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FB_API __declspec(dllexport)
#else
#define FB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fb_status {
  FB_OK = 0,
  FB_ERR_USAGE = 1,     /* bad arguments or null handles */
  FB_ERR_CONFIG = 2,    /* invalid settings */
  FB_ERR_PARSE = 3,     /* malformed input file */
  FB_ERR_DATA = 4,      /* bad or missing data values */
  FB_ERR_IO = 5,        /* file system failure */
  FB_ERR_NUMERIC = 6,   /* NaN or Inf during computation */
  FB_ERR_DIMENSION = 7, /* shape mismatch */
  FB_ERR_DOMAIN = 8,    /* argument outside an operation's domain */
  FB_ERR_INTERNAL = 9
} fb_status;

typedef struct fb_config fb_config;
typedef struct fb_model fb_model;
typedef struct fb_report fb_report;

FB_API const char* fb_version(void);
FB_API const char* fb_last_error(void);
FB_API const char* fb_status_name(fb_status status);
/* Process exit code for a status: 0 ok, 1 usage/config, 2 data, 3 numeric. */
FB_API int fb_exit_code(fb_status status);

/* ---- configuration ---- */

/* profile: "paper", "desk" or NULL for "paper". */
FB_API fb_status fb_config_new(const char* profile, fb_config** out);
FB_API void fb_config_free(fb_config* cfg);
FB_API fb_status fb_config_load(fb_config* cfg, const char* path);
/* "dotted.key=value"; "lambda" aliases alignment.lambda. */
FB_API fb_status fb_config_set(fb_config* cfg, const char* assignment);
/* Resolved config text; valid until the next call on cfg. */
FB_API fb_status fb_config_text(fb_config* cfg, const char** text);

/* ---- commands ---- */

FB_API fb_status fb_run_train(const fb_config* cfg, const char* out_dir, int verbose,
                              fb_report** out);
FB_API fb_status fb_run_eval(const fb_config* cfg, const char* const* checkpoints,
                             size_t n_checkpoints, const char* out_dir, int export_features,
                             int verbose, fb_report** out);
/* values: comma-separated grid or NULL for the axis default. */
FB_API fb_status fb_run_ablate(const fb_config* cfg, const char* axis, const char* values,
                               const char* out_dir, int verbose, fb_report** out);

typedef struct fb_metrics_row {
  const char* scenario;
  const char* kind;
  const char* model;
  const char* divergence;
  double lambda;
  uint64_t seed;
  double smape;
  double mase; /* NaN when the scale is degenerate */
  size_t n_instances;
  double runtime_ms;
} fb_metrics_row;

FB_API void fb_report_free(fb_report* report);
/* Formatted text table. */
FB_API const char* fb_report_text(const fb_report* report);
FB_API size_t fb_report_rows(const fb_report* report);
FB_API fb_status fb_report_row(const fb_report* report, size_t index, fb_metrics_row* out);
/* Ablation reports only: number of grid cells that failed. */
FB_API size_t fb_report_failed(const fb_report* report);

/* ---- models ---- */

FB_API fb_status fb_model_create(const fb_config* cfg, uint64_t seed, fb_model** out);
FB_API fb_status fb_model_load(const char* path, fb_model** out);
FB_API fb_status fb_model_save(const fb_model* model, const char* path, uint64_t seed);
FB_API void fb_model_free(fb_model* model);
/* Any pointer may be NULL. */
FB_API fb_status fb_model_dims(const fb_model* model, size_t* alpha, size_t* beta,
                               size_t* gamma, size_t* stacks);
/* x is rows x alpha row-major; out receives rows x beta. */
FB_API fb_status fb_model_predict(const fb_model* model, const double* x, size_t rows,
                                  size_t cols, double* out, size_t out_len);

/* ---- metrics and divergences ---- */

FB_API fb_status fb_smape(const double* pred, const double* target, size_t n, double* out);
/* Flattened MASE; *out is NaN when the target has no variation. */
FB_API fb_status fb_mase(const double* pred, const double* target, size_t n, double* out);
/* x is n x d, y is m x d, both row-major. */
FB_API fb_status fb_sinkhorn_divergence(const double* x, size_t n, const double* y, size_t m,
                                        size_t d, double epsilon, double* out);

#ifdef __cplusplus
}
#endif

#endif /* FANBEATS_H */
