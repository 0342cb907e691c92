#ifndef SVIDR_H
#define SVIDR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SvidrStatus {
  SVIDR_STATUS_OK = 0,
  SVIDR_STATUS_NULL_POINTER = 1,
  SVIDR_STATUS_INVALID_UTF8 = 2,
  SVIDR_STATUS_CONFIG = 3,
  SVIDR_STATUS_DATA = 4,
  SVIDR_STATUS_NUMERICAL = 5,
  SVIDR_STATUS_OUT_OF_RANGE = 6,
  SVIDR_STATUS_BUFFER_TOO_SMALL = 7,
  SVIDR_STATUS_PANIC = 8,
} SvidrStatus;

/**
 * Opaque fitted model.
 */
typedef struct SvidrFit SvidrFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *svidr_version(void);

/**
 * Message of the most recent failure on this thread, or an empty string.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *svidr_last_error_message(void);

/**
 * Fits the model described by `config_toml` (with `[model]` and `[fit]`
 * tables) to `csv_text` and stores a new handle in `*out`.
 *
 * # Safety
 * `config_toml` and `csv_text` must be NUL-terminated strings and `out` a
 * valid pointer to writable storage.
 */
enum SvidrStatus svidr_fit_from_toml(const char *config_toml,
                                     const char *csv_text,
                                     struct SvidrFit **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `fit` must be null or a handle from `svidr_fit_from_toml` not yet freed.
 */
void svidr_fit_free(struct SvidrFit *fit);

/**
 * # Safety
 * `fit` must be a live handle and `out` writable.
 */
enum SvidrStatus svidr_fit_num_coefficients(const struct SvidrFit *fit, size_t *out);

/**
 * Posterior means of the coefficients into `out[0..len]`.
 *
 * # Safety
 * `fit` must be a live handle and `out` point to `len` writable doubles.
 */
enum SvidrStatus svidr_fit_mean(const struct SvidrFit *fit, double *out, size_t len);

/**
 * Posterior marginal standard deviations of the coefficients.
 *
 * # Safety
 * `fit` must be a live handle and `out` point to `len` writable doubles.
 */
enum SvidrStatus svidr_fit_sd(const struct SvidrFit *fit, double *out, size_t len);

/**
 * # Safety
 * `fit` must be a live handle and `out` writable.
 */
enum SvidrStatus svidr_fit_num_tau(const struct SvidrFit *fit, size_t *out);

/**
 * Central estimates of the log smoothing variances.
 *
 * # Safety
 * `fit` must be a live handle and `out` point to `len` writable doubles.
 */
enum SvidrStatus svidr_fit_tau(const struct SvidrFit *fit, double *out, size_t len);

/**
 * Number of recorded ELBO estimates, one per epoch.
 *
 * # Safety
 * `fit` must be a live handle and `out` writable.
 */
enum SvidrStatus svidr_fit_num_epochs(const struct SvidrFit *fit, size_t *out);

/**
 * Per-epoch ELBO estimates; non-finite epochs are NaN.
 *
 * # Safety
 * `fit` must be a live handle and `out` point to `len` writable doubles.
 */
enum SvidrStatus svidr_fit_elbo_trace(const struct SvidrFit *fit, double *out, size_t len);

/**
 * Label of coefficient `index` as a NUL-terminated string in `buf`. The
 * required size including the NUL is stored in `*needed` when non-null,
 * also when the buffer is too small.
 *
 * # Safety
 * `fit` must be a live handle, `buf` null or `cap` writable bytes, and
 * `needed` null or writable.
 */
enum SvidrStatus svidr_fit_label(const struct SvidrFit *fit,
                                 size_t index,
                                 char *buf,
                                 size_t cap,
                                 size_t *needed);

/**
 * Label of smoothing variance `index`, with the buffer protocol of
 * `svidr_fit_label`.
 *
 * # Safety
 * As for `svidr_fit_label`.
 */
enum SvidrStatus svidr_fit_tau_label(const struct SvidrFit *fit,
                                     size_t index,
                                     char *buf,
                                     size_t cap,
                                     size_t *needed);

/**
 * Posterior artifact as compact JSON, with the buffer protocol of
 * `svidr_fit_label`.
 *
 * # Safety
 * As for `svidr_fit_label`.
 */
enum SvidrStatus svidr_fit_posterior_json(const struct SvidrFit *fit,
                                          char *buf,
                                          size_t cap,
                                          size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SVIDR_H */
