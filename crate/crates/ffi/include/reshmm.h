#ifndef RESHMM_H
#define RESHMM_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every exported function.
 */
typedef enum ReshmmStatus {
  RESHMM_STATUS_OK = 0,
  RESHMM_STATUS_NULL_POINTER = 1,
  RESHMM_STATUS_INVALID_ARGUMENT = 2,
  RESHMM_STATUS_DATA_ERROR = 3,
  RESHMM_STATUS_CONFIG_ERROR = 4,
  RESHMM_STATUS_NUMERICAL_FAILURE = 5,
  RESHMM_STATUS_NO_SUPPORT = 6,
  RESHMM_STATUS_IO_ERROR = 7,
  RESHMM_STATUS_PANIC = 8,
} ReshmmStatus;

/**
 * Fitted model parameters.
 */
typedef struct ReshmmModel ReshmmModel;

/**
 * Most likely segmentation of one waveform.
 */
typedef struct ReshmmSegmentation ReshmmSegmentation;

typedef struct ReshmmScores {
  double logp;
  double score_shape;
  double score_noise;
} ReshmmScores;

/**
 * `state` and `start` are 1-based.
 */
typedef struct ReshmmSegment {
  size_t state;
  size_t start;
  size_t duration;
} ReshmmSegment;

typedef struct ReshmmFitOptions {
  size_t num_states;
  /**
   * 0 selects the length of the longest waveform.
   */
  size_t d_max;
  size_t max_iter;
  double rel_tol;
  /**
   * Nonzero fits random effects; zero fits the plain model.
   */
  int32_t random_effects;
} ReshmmFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *reshmm_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *reshmm_version(void);

/**
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ReshmmStatus reshmm_model_from_json(const char *json, struct ReshmmModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ReshmmStatus reshmm_model_load(const char *path, struct ReshmmModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum ReshmmStatus reshmm_model_save(const struct ReshmmModel *model, const char *path);

/**
 * Serializes the model. Release the string with [`reshmm_string_free`].
 *
 * # Safety
 * `model` must come from this library and `out` must be valid.
 */
enum ReshmmStatus reshmm_model_to_json(const struct ReshmmModel *model, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void reshmm_string_free(char *s);

/**
 * # Safety
 * `model` must be null or a handle returned by this library.
 */
void reshmm_model_free(struct ReshmmModel *model);

/**
 * # Safety
 * `model` must come from this library and `out` must be valid.
 */
enum ReshmmStatus reshmm_model_num_states(const struct ReshmmModel *model, size_t *out);

/**
 * Log-likelihood of one waveform; `-inf` when it has no support.
 *
 * # Safety
 * `y` must point to `len` doubles; `model` and `out` must be valid.
 */
enum ReshmmStatus reshmm_loglik(const struct ReshmmModel *model,
                                const double *y,
                                size_t len,
                                double *out);

/**
 * # Safety
 * `y` must point to `len` doubles; `model` and `out` must be valid.
 */
enum ReshmmStatus reshmm_score(const struct ReshmmModel *model,
                               const double *y,
                               size_t len,
                               struct ReshmmScores *out);

/**
 * # Safety
 * `y` must point to `len` doubles; `model` and `out` must be valid.
 */
enum ReshmmStatus reshmm_segment(const struct ReshmmModel *model,
                                 const double *y,
                                 size_t len,
                                 struct ReshmmSegmentation **out);

/**
 * # Safety
 * `seg` must come from [`reshmm_segment`]; `out` must be valid.
 */
enum ReshmmStatus reshmm_segmentation_len(const struct ReshmmSegmentation *seg, size_t *out);

/**
 * # Safety
 * `seg` must come from [`reshmm_segment`]; `out` must be valid.
 */
enum ReshmmStatus reshmm_segmentation_get(const struct ReshmmSegmentation *seg,
                                          size_t index,
                                          struct ReshmmSegment *out);

/**
 * # Safety
 * `seg` must come from [`reshmm_segment`]; `out` must be valid.
 */
enum ReshmmStatus reshmm_segmentation_log_joint(const struct ReshmmSegmentation *seg, double *out);

/**
 * # Safety
 * `seg` must be null or a handle returned by [`reshmm_segment`].
 */
void reshmm_segmentation_free(struct ReshmmSegmentation *seg);

/**
 * One-step-ahead forecasts and predictive log-densities for `t = 1..len`.
 * Both output buffers must hold `len` doubles; either may be null.
 *
 * # Safety
 * `y` must point to `len` doubles and non-null outputs to `len` doubles.
 */
enum ReshmmStatus reshmm_predict(const struct ReshmmModel *model,
                                 const double *y,
                                 size_t len,
                                 double *forecasts,
                                 double *log_densities);

/**
 * Fills `out` with the default options for `num_states` states.
 *
 * # Safety
 * `out` must be valid.
 */
enum ReshmmStatus reshmm_fit_options_default(size_t num_states, struct ReshmmFitOptions *out);

/**
 * Fits a model by EM. The corpus is passed as concatenated samples with
 * one length per waveform. `iterations` may be null.
 *
 * # Safety
 * `values` must hold the sum of `lengths[0..n_waveforms]` doubles;
 * `lengths` must hold `n_waveforms` entries.
 */
enum ReshmmStatus reshmm_fit(const double *values,
                             const size_t *lengths,
                             size_t n_waveforms,
                             const struct ReshmmFitOptions *options,
                             struct ReshmmModel **out,
                             size_t *iterations);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RESHMM_H */
