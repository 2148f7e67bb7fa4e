#ifndef LOADCAST_H
#define LOADCAST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define LOADCAST_OK 0

/**
 * A required pointer argument was null.
 */
#define LOADCAST_ERR_NULL_POINTER 1

/**
 * An argument had the wrong length, range or encoding.
 */
#define LOADCAST_ERR_INVALID_ARGUMENT 2

#define LOADCAST_ERR_IO 3

/**
 * Input loads were negative, non-finite or otherwise unusable.
 */
#define LOADCAST_ERR_DATA 4

/**
 * The checkpoint file is malformed, corrupted or of an unknown version.
 */
#define LOADCAST_ERR_CHECKPOINT 5

/**
 * The model produced a non-finite value.
 */
#define LOADCAST_ERR_NUMERIC 6

/**
 * An internal panic was caught at the boundary.
 */
#define LOADCAST_ERR_INTERNAL 7

/**
 * Hours of load history a forecast consumes.
 */
#define LOADCAST_HISTORY_HOURS 168

/**
 * Hours produced by one forecast.
 */
#define LOADCAST_HORIZON_HOURS 24

/**
 * Opaque handle to a loaded checkpoint.
 */
typedef struct LoadcastModel LoadcastModel;

/**
 * Forecast accuracy. `mape` is NaN when every actual value is zero.
 */
typedef struct LoadcastMetrics {
  double mae;
  double mape;
  double rmse;
  /**
   * Hours left out of the MAPE because the actual load was zero.
   */
  size_t mape_excluded;
} LoadcastMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string. Do not free it.
 */
const char *loadcast_version(void);

/**
 * Loads and verifies a checkpoint. On success `*out` receives a handle that
 * must be released with `loadcast_model_free`.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
int32_t loadcast_model_load(const char *path, struct LoadcastModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from `loadcast_model_load` and not be freed twice.
 */
void loadcast_model_free(struct LoadcastModel *model);

/**
 * Forecasts the 24 hourly loads (MW) of `target_date` from the
 * `LOADCAST_HISTORY_HOURS` loads that immediately precede its midnight.
 * `holidays` lists holiday dates and may be null when `n_holidays` is 0.
 *
 * # Safety
 * Every pointer must be valid for the stated number of elements.
 */
int32_t loadcast_forecast_day(const struct LoadcastModel *model,
                              const double *history_mw,
                              size_t history_len,
                              int32_t target_date,
                              const int32_t *holidays,
                              size_t n_holidays,
                              double *out_mw,
                              size_t out_len);

/**
 * Computes MAE, MAPE (%) and RMSE of `forecast` against `actual`.
 *
 * # Safety
 * `actual` and `forecast` must hold `n` values and `out` must be valid.
 */
int32_t loadcast_metrics(const double *actual,
                         const double *forecast,
                         size_t n,
                         struct LoadcastMetrics *out);

/**
 * Copy of the last error message on this thread, or null if the last call
 * succeeded. Release it with `loadcast_string_free`.
 */
char *loadcast_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void loadcast_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOADCAST_H */
