#ifndef CSB_H
#define CSB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  CSB_STATUS_OK = 0,
  CSB_STATUS_NULL_POINTER = 1,
  CSB_STATUS_INVALID_UTF8 = 2,
  CSB_STATUS_INVALID_ARGUMENT = 3,
  CSB_STATUS_INVALID_JSON = 4,
  CSB_STATUS_IO = 5,
  CSB_STATUS_PANIC = 6,
} CsbStatus;

typedef enum {
  CSB_DIRECTION_HIGHER_IS_BETTER = 0,
  CSB_DIRECTION_LOWER_IS_BETTER = 1,
} CsbDirection;

/**
 * Opaque broker instance.
 */
typedef struct CsbBroker CsbBroker;

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next call on the same thread; do not free.
 */
const char *csb_last_error(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void csb_string_free(char *s);

/**
 * Weighted power utility of `qos` under `weights` and `sensitivities`.
 *
 * # Safety
 * Each array must hold `n` doubles; `out` must be writable.
 */
CsbStatus csb_aggregate_utility(const double *qos,
                                const double *weights,
                                const double *sensitivities,
                                size_t n,
                                double *out);

/**
 * Utility of the consumer minima, the acceptance threshold.
 *
 * # Safety
 * Each array must hold `n` doubles; `out` must be writable.
 */
CsbStatus csb_acceptance_threshold(const double *minima,
                                   const double *weights,
                                   const double *sensitivities,
                                   size_t n,
                                   double *out);

/**
 * Clamped min-max normalization of a raw measurement to `[0, 1]`.
 *
 * # Safety
 * `out` must be writable.
 */
CsbStatus csb_normalize_metric(double raw,
                               CsbDirection direction,
                               double raw_min,
                               double raw_max,
                               double *out);

/**
 * Ranks offerings (`[{"provider_id", "qos"}]`) against a profile (explicit
 * or tier form) and returns the ranking as JSON.
 *
 * # Safety
 * Inputs must be NUL-terminated strings; `out_json` must be writable.
 */
CsbStatus csb_rank_json(const char *offerings_json, const char *profile_json, char **out_json);

/**
 * Uniform-sensitivity sweep as `beta,subject,utility` CSV.
 *
 * # Safety
 * Inputs must be NUL-terminated strings; `out_csv` must be writable.
 */
CsbStatus csb_sweep_csv(const char *offerings_json,
                        const char *profile_json,
                        double beta_min,
                        double beta_max,
                        double beta_step,
                        char **out_csv);

/**
 * Opens a broker persisted in `data_dir`, or an in-memory one when
 * `data_dir` is NULL. Release with [`csb_broker_free`].
 *
 * # Safety
 * `data_dir` must be NULL or a NUL-terminated string; `out` must be writable.
 */
CsbStatus csb_broker_open(const char *data_dir, CsbBroker **out);

/**
 * # Safety
 * `broker` must be NULL or a handle from [`csb_broker_open`], freed once.
 */
void csb_broker_free(CsbBroker *broker);

/**
 * Dispatches one API request (`"GET"`/`"POST"`, path with optional query,
 * JSON body or NULL). The HTTP-style status is written to `status` and the
 * JSON response body to `out_body`; API-level errors still return
 * `CSB_STATUS_OK` with a non-2xx status.
 *
 * # Safety
 * `broker` must be a live handle; strings NUL-terminated; outputs writable.
 */
CsbStatus csb_broker_call(const CsbBroker *broker,
                          const char *method,
                          const char *path,
                          const char *body_json,
                          uint16_t *status,
                          char **out_body);

#endif  /* CSB_H */
