#ifndef SURVGP_H
#define SURVGP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SurvgpStatus {
  SURVGP_STATUS_OK = 0,
  SURVGP_STATUS_NULL_POINTER = 1,
  SURVGP_STATUS_INVALID_ARGUMENT = 2,
  SURVGP_STATUS_VALIDATION = 3,
  SURVGP_STATUS_PARSE = 4,
  SURVGP_STATUS_SCHEMA_VERSION = 5,
  SURVGP_STATUS_ILL_CONDITIONED = 6,
  SURVGP_STATUS_NUMERICAL = 7,
  SURVGP_STATUS_IO = 8,
  SURVGP_STATUS_PANIC = 9,
} SurvgpStatus;

/**
 * Opaque trained model.
 */
typedef struct SurvgpModel SurvgpModel;

/**
 * Distribution of the event probability: `H = 1 - exp(k·exp(X))`,
 * `X ~ N(loc, scale²)`.
 */
typedef struct SurvgpDist {
  double loc;
  double scale;
  double k;
} SurvgpDist;

/**
 * Verdict codes: 0 negative, 1 positive, 2 abstain.
 */
typedef struct SurvgpDecision {
  int32_t verdict;
  double h_lo;
  double h_hi;
  double tau_lo;
  double tau_hi;
} SurvgpDecision;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *survgp_last_error(void);

/**
 * Loads a checkpoint file into a new model handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SurvgpStatus survgp_model_load(const char *path, struct SurvgpModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from [`survgp_model_load`] and not be used afterwards.
 */
void survgp_model_free(struct SurvgpModel *model);

/**
 * Number of signals and covariates the model expects.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SurvgpStatus survgp_model_dims(const struct SurvgpModel *model,
                                    uintptr_t *n_signals,
                                    uintptr_t *n_covariates);

/**
 * Event-probability distribution at landmark `t` for horizon `horizon`.
 *
 * Observations are `(signal_id, time, value)` triples in raw units, with
 * 1-based signal ids in any order. `covariates` holds the model's
 * covariates (held constant from time 0) and may be null when there are
 * none.
 *
 * # Safety
 * Array pointers must reference `n_obs` (respectively the model's
 * covariate count) readable elements; `out` must be valid.
 */
enum SurvgpStatus survgp_model_predict(const struct SurvgpModel *model,
                                       const uint32_t *signal_ids,
                                       const double *times,
                                       const double *values,
                                       uintptr_t n_obs,
                                       const double *covariates,
                                       double t,
                                       double horizon,
                                       struct SurvgpDist *out);

/**
 * `q`-quantile of the event probability.
 *
 * # Safety
 * `dist` and `out` must be valid.
 */
enum SurvgpStatus survgp_quantile(const struct SurvgpDist *dist, double q, double *out);

/**
 * Mean event probability by Gauss-Hermite quadrature with `n_nodes` nodes.
 *
 * # Safety
 * `dist` and `out` must be valid.
 */
enum SurvgpStatus survgp_expected_event_probability(const struct SurvgpDist *dist,
                                                    uintptr_t n_nodes,
                                                    double *out);

/**
 * Quantile-risk decision for relative costs `l1`, `l2` and quantile `q`.
 *
 * # Safety
 * `dist` and `out` must be valid.
 */
enum SurvgpStatus survgp_robust_decide(const struct SurvgpDist *dist,
                                       double l1,
                                       double l2,
                                       double q,
                                       struct SurvgpDecision *out);

/**
 * Expected-risk decision for a known event probability `h0`.
 *
 * # Safety
 * `out` must be valid.
 */
enum SurvgpStatus survgp_point_decide(double h0, double l1, double l2, struct SurvgpDecision *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SURVGP_H */
