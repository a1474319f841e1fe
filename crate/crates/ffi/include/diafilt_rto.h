#ifndef DIAFILT_RTO_H
#define DIAFILT_RTO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes. 3 and 4 match the command-line exit codes.
typedef enum DfStatus {
  DF_STATUS_OK = 0,
  DF_STATUS_NULL_POINTER = 1,
  DF_STATUS_CONFIG = 2,
  DF_STATUS_MODEL_INVALIDATED = 3,
  DF_STATUS_TIMEOUT = 4,
  DF_STATUS_DOMAIN = 5,
  DF_STATUS_DEGENERATE_MODEL = 6,
  DF_STATUS_UNSUPPORTED_STRUCTURE = 7,
  DF_STATUS_INFEASIBLE = 8,
  DF_STATUS_IO = 9,
  DF_STATUS_PANIC = 10,
} DfStatus;

// Opaque strategy context: process, initial uncertainty and cached decisions.
typedef struct DfContext DfContext;

// Opaque streaming set-membership estimator.
typedef struct DfEstimator DfEstimator;

// Opaque process configuration.
typedef struct DfProcess DfProcess;

typedef struct DfParams {
  double p1;
  double p2;
  double p3;
} DfParams;

typedef struct DfPolicy {
  double t1;
  double t2;
  double tf;
  double u_s;
} DfPolicy;

typedef struct DfBox {
  double lo[3];
  double hi[3];
} DfBox;

typedef struct DfWindows {
  double t1[2];
  double t2[2];
  double tf[2];
  double us[2];
} DfWindows;

typedef struct DfBatchResult {
  struct DfParams p_true;
  double t1;
  double t2;
  double tf;
  double regret;
  bool feasible;
  uint32_t reopt_count;
} DfBatchResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Valid until the
// next failing call on the same thread.
const char *df_last_error_message(void);

// Default process configuration.
//
// # Safety
// `out_handle` must be a valid pointer.
enum DfStatus df_process_new_default(struct DfProcess **out_handle);

// Process configuration from a JSON string.
//
// # Safety
// `json` must be a NUL-terminated string and `out_handle` a valid pointer.
enum DfStatus df_process_from_json(const char *json, struct DfProcess **out_handle);

// # Safety
// `h` must come from `df_process_new_*` and not be used afterwards; NULL is ignored.
void df_process_free(struct DfProcess *h);

// Permeate flux [L/h].
//
// # Safety
// Pointers must be valid.
enum DfStatus df_flux(double c1, double c2, const struct DfParams *p, double *out_q);

// Switching function at `(c1, c2)`.
//
// # Safety
// Pointers must be valid.
enum DfStatus df_switching_function(double c1, double c2, const struct DfParams *p, double *out_s);

// # Safety
// Pointers must be valid.
enum DfStatus df_singular_control(const struct DfParams *p, double *out_u);

// Optimal switching times for known parameters.
//
// # Safety
// Pointers must be valid.
enum DfStatus df_compute_switch_times(const struct DfProcess *process,
                                      const struct DfParams *p,
                                      struct DfPolicy *out_policy);

// Switching-time windows of a parameter box.
//
// # Safety
// Pointers must be valid.
enum DfStatus df_project_windows(const struct DfProcess *process,
                                 const struct DfBox *b,
                                 struct DfWindows *out_windows);

// Estimator with prior box `prior` and noise bound `sigma`.
//
// # Safety
// Pointers must be valid.
enum DfStatus df_estimator_new(const struct DfBox *prior,
                               double sigma,
                               struct DfEstimator **out_handle);

// Add one flux measurement and write the updated box.
//
// # Safety
// `h` must be a live estimator handle; `out_box` may be NULL.
enum DfStatus df_estimator_push(struct DfEstimator *h,
                                double t,
                                double q_m,
                                double c1,
                                double c2,
                                struct DfBox *out_box);

// # Safety
// Pointers must be valid.
enum DfStatus df_estimator_bounds(const struct DfEstimator *h, struct DfBox *out_box);

// # Safety
// `h` must come from `df_estimator_new` and not be used afterwards; NULL is ignored.
void df_estimator_free(struct DfEstimator *h);

// Strategy context for case 1 (limiting flux) or 2 (generalized) with a
// gamma-box of relative half-width `pct`, default strategy settings.
//
// # Safety
// Pointers must be valid.
enum DfStatus df_context_new(const struct DfProcess *process,
                             int32_t case_id,
                             double pct,
                             struct DfContext **out_handle);

// # Safety
// `h` must come from `df_context_new` and not be used afterwards; NULL is ignored.
void df_context_free(struct DfContext *h);

// One batch of `strategy` (0 optimal, 1 nominal, 2 robust, 3 adaptive) with
// the truth and noise of batch `batch` under `seed`, as in the Monte Carlo harness.
//
// # Safety
// Pointers must be valid.
enum DfStatus df_run_batch(const struct DfContext *ctx,
                           int32_t strategy,
                           uint64_t seed,
                           uint64_t batch,
                           struct DfBatchResult *out_result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIAFILT_RTO_H */
