/* SPDX-License-Identifier: Apache-2.0 */
/*
 * C interface of the rshe library. Every call returns an rshe_status; the
 * message of the most recent failure on the calling thread is available
 * through rshe_last_error().
 */
#ifndef RSHE_RSHE_H
#define RSHE_RSHE_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define RSHE_API __declspec(dllexport)
#else
#define RSHE_API __attribute__((visibility("default")))
#endif

typedef enum rshe_status {
  RSHE_OK = 0,
  RSHE_ERROR = 1,
  RSHE_VALIDATION_ERROR = 2,
  RSHE_NUMERICAL_ERROR = 3,
  RSHE_INVALID_ARGUMENT = 4
} rshe_status;

typedef struct rshe_config rshe_config;  /* parsed run configuration */
typedef struct rshe_result rshe_result;  /* outcome of a run or replay */

RSHE_API const char* rshe_version(void);
/* Message of the last failed call on this thread; "" when none. */
RSHE_API const char* rshe_last_error(void);

RSHE_API rshe_status rshe_config_load(const char* path, rshe_config** out);
RSHE_API rshe_status rshe_config_parse(const char* text, rshe_config** out);
RSHE_API void rshe_config_free(rshe_config* config);
/* Name of the configured experiment; owned by the handle. */
RSHE_API const char* rshe_config_experiment(const rshe_config* config);
RSHE_API const char* rshe_config_output_dir(const rshe_config* config);

/* output_dir may be NULL to use the configured directory. The result is
 * returned even when the run fails; its status is the return value. */
RSHE_API rshe_status rshe_run(const rshe_config* config, const char* output_dir, rshe_result** out);
RSHE_API rshe_status rshe_run_file(const char* path, const char* output_dir, rshe_result** out);
RSHE_API rshe_status rshe_validate_file(const char* path);
RSHE_API rshe_status rshe_replay(const char* manifest_path, const char* output_dir, rshe_result** out);

RSHE_API int rshe_result_exit_code(const rshe_result* result);
RSHE_API const char* rshe_result_message(const rshe_result* result);
RSHE_API const char* rshe_result_output_dir(const rshe_result* result);
/* Experiment summary as a JSON object. */
RSHE_API const char* rshe_result_summary(const rshe_result* result);
RSHE_API void rshe_result_free(rshe_result* result);

/* Ascending rearrangement of n values, in place. */
RSHE_API rshe_status rshe_rearrange(double* values, size_t n);
/* W2 distance between two quantile vectors of length n (L2 over the grid). */
RSHE_API rshe_status rshe_w2_distance(const double* a, const double* b, size_t n, double* out);

#ifdef __cplusplus
}
#endif

#endif /* RSHE_RSHE_H */
