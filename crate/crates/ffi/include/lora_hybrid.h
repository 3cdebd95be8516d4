#ifndef LORA_HYBRID_H
#define LORA_HYBRID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LhStatus {
  LH_STATUS_OK = 0,
  LH_STATUS_NULL_POINTER = 1,
  LH_STATUS_INVALID_UTF8 = 2,
  LH_STATUS_INVALID_ARGUMENT = 3,
  LH_STATUS_CONFIG = 4,
  LH_STATUS_IO = 5,
  LH_STATUS_TOO_LARGE = 6,
  LH_STATUS_INFEASIBLE = 7,
  LH_STATUS_PANIC = 8,
} LhStatus;

/**
 * Opaque network configuration.
 */
typedef struct LhConfig LhConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next call into the library on the
 * same thread.
 */
const char *lh_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lh_version(void);

/**
 * New configuration with the built-in defaults.
 */
struct LhConfig *lh_config_new(void);

/**
 * Parses a `key = value` file into a new handle stored in `*out`.
 *
 * # Safety
 *
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LhStatus lh_config_load(const char *path, struct LhConfig **out);

/**
 * Applies one `key=value` override. The handle is unchanged on failure.
 *
 * # Safety
 *
 * `cfg` must come from this library and `assignment` be NUL-terminated.
 */
enum LhStatus lh_config_set(struct LhConfig *cfg, const char *assignment);

/**
 * Number of devices `K`; 0 for a null handle.
 *
 * # Safety
 *
 * `cfg` must be null or come from this library.
 */
size_t lh_config_devices(const struct LhConfig *cfg);

/**
 * Number of channels `M`; 0 for a null handle.
 *
 * # Safety
 *
 * `cfg` must be null or come from this library.
 */
size_t lh_config_channels(const struct LhConfig *cfg);

/**
 * # Safety
 *
 * `cfg` must be null or come from this library and not be used afterwards.
 */
void lh_config_free(struct LhConfig *cfg);

/**
 * Assigns channels and spreading factors for one frame.
 *
 * `gains` holds `K * M` power gains, device-major. `distances` (length `K`)
 * is needed by `hcrma` only and may be null otherwise. On success
 * `out_channel[k]` is the channel of device `k` or -1, `out_sf[k]` its
 * spreading factor or 0, and `*out_objective` the per-frame score.
 *
 * Schemes: `optimal`, `hurma`, `hcrma`, `rr`.
 *
 * # Safety
 *
 * All pointers must be valid for the stated lengths; `out_objective` may be
 * null.
 */
enum LhStatus lh_assign(const struct LhConfig *cfg,
                        const char *scheme,
                        const double *gains,
                        size_t gains_len,
                        const double *distances,
                        int32_t *out_channel,
                        uint32_t *out_sf,
                        double *out_objective);

/**
 * Offline optimal battery draws. Writes `len` values to `out_xh` and the
 * harvested value `sum W Xh` to `*out_objective` (may be null).
 *
 * # Safety
 *
 * `e`, `w`, `x` and `out_xh` must each hold `len` doubles.
 */
enum LhStatus lh_plan(const double *e,
                      const double *w,
                      const double *x,
                      size_t len,
                      double b_max,
                      double *out_xh,
                      double *out_objective);

/**
 * Monte Carlo grid cost of a non-learning scheme. On success `*out_csv`
 * receives a results table to be released with [`lh_string_free`].
 *
 * `mode` is `iid` or `ge`; `scheme` one of `optimal`, `hurma`, `hcrma`,
 * `random`, `rr`.
 *
 * # Safety
 *
 * String arguments must be NUL-terminated and `out_csv` valid.
 */
enum LhStatus lh_simulate(const struct LhConfig *cfg,
                          const char *scheme,
                          const char *mode,
                          size_t trials,
                          char **out_csv);

/**
 * # Safety
 *
 * `s` must be null or a string returned by this library, not yet freed.
 */
void lh_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LORA_HYBRID_H */
