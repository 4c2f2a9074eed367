#ifndef BIDROP_H
#define BIDROP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BdStatus {
  BD_STATUS_OK = 0,
  BD_STATUS_NULL_POINTER = 1,
  BD_STATUS_INVALID_ARGUMENT = 2,
  BD_STATUS_SHAPE_MISMATCH = 3,
  BD_STATUS_NUMERIC = 4,
  BD_STATUS_CONFIG = 5,
  BD_STATUS_IO = 6,
  BD_STATUS_PANIC = 7,
} BdStatus;

/**
 * Masked Adam state over a flat parameter vector.
 */
typedef struct BdAdam BdAdam;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into this library from the same thread.
 */
const char *bd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bd_version(void);

/**
 * Keep the `ceil((1 − p)·n)` largest of `scores[0..n]`; writes 0/1 into
 * `mask_out[0..n]` and the kept count into `selected_out` (may be null).
 */
enum BdStatus bd_select_subnet(const double *scores,
                               size_t n,
                               double p,
                               uint8_t *mask_out,
                               size_t *selected_out);

/**
 * Selection scores from `k` gradient samples stored row-major in
 * `grads[0..k*n]` and parameters `theta[0..n]`. `score_out` receives the
 * final score; `perturbation_out` and `scaling_out` may be null.
 */
enum BdStatus bd_bidrop_scores(const double *grads,
                               size_t k,
                               size_t n,
                               const double *theta,
                               double eps_den,
                               double *score_out,
                               double *perturbation_out,
                               double *scaling_out);

/**
 * Keep the `keep` largest of `scores[0..n]` (ties to the lower index).
 */
enum BdStatus bd_select_top(const double *scores, size_t n, size_t keep, uint8_t *mask_out);

/**
 * New optimizer for `n` parameters, or null on invalid hyperparameters.
 */
struct BdAdam *bd_adam_new(size_t n, double lr, double beta1, double beta2, double eps);

/**
 * One masked step: `theta[0..n]` is updated in place. A null `mask` selects
 * every element.
 */
enum BdStatus bd_adam_step(struct BdAdam *adam,
                           double *theta,
                           const double *grad,
                           const uint8_t *mask,
                           size_t n);

/**
 * Steps taken so far; 0 for a null handle.
 */
uint64_t bd_adam_step_count(const struct BdAdam *adam);

void bd_adam_free(struct BdAdam *adam);

/**
 * Run an experiment from config-file text. The report JSON is returned
 * through `report_json_out` (release with [`bd_string_free`]). When
 * `out_dir` is non-null, `report.json`, `report.csv` and any mask dumps are
 * also written there.
 */
enum BdStatus bd_run_config(const char *config_text, const char *out_dir, char **report_json_out);

void bd_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BIDROP_H */
