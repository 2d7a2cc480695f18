#ifndef ARITHDENSITY_H
#define ARITHDENSITY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Config formats accepted by `ad_run_experiment`.
 */
#define AD_FORMAT_TOML 0

#define AD_FORMAT_JSON 1

typedef enum AdStatus {
  AD_STATUS_OK = 0,
  AD_STATUS_NULL_POINTER = 1,
  AD_STATUS_INVALID_UTF8 = 2,
  AD_STATUS_PARSE = 3,
  AD_STATUS_INADMISSIBLE = 4,
  AD_STATUS_BUDGET_EXCEEDED = 5,
  AD_STATUS_INVALID_ARGUMENT = 6,
  AD_STATUS_MODEL_DOMAIN = 7,
  AD_STATUS_KERNEL_RANGE = 8,
  AD_STATUS_PRECONDITION = 9,
  AD_STATUS_UNKNOWN_NAME = 10,
  AD_STATUS_OVERFLOW = 11,
  AD_STATUS_CONFIG = 12,
  AD_STATUS_IO = 13,
  AD_STATUS_NUMERICAL = 14,
  AD_STATUS_INTERNAL = 99,
} AdStatus;

/**
 * Parsed homogeneous integer form.
 */
typedef struct AdForm AdForm;

/**
 * Histogram cache with an evaluation budget. Safe to share between threads.
 */
typedef struct AdStore AdStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, static storage.
 */
const char *ad_version(void);

/**
 * Message for the last failure on this thread; empty if none. Valid until
 * the next failing call on the same thread.
 */
const char *ad_last_error_message(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, freed once.
 */
void ad_string_free(char *s);

/**
 * Parses a form such as `"x1^2 + 2*x2^2 - x3^2"`.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out_form` writable.
 */
enum AdStatus ad_form_parse(const char *text, struct AdForm **out_form);

/**
 * # Safety
 * `f` must be NULL or a handle from `ad_form_parse`, freed once.
 */
void ad_form_free(struct AdForm *f);

/**
 * Number of variables; 0 for NULL.
 *
 * # Safety
 * `f` must be NULL or a live handle.
 */
size_t ad_form_dim(const struct AdForm *f);

/**
 * Degree; 0 for NULL.
 *
 * # Safety
 * `f` must be NULL or a live handle.
 */
uint32_t ad_form_degree(const struct AdForm *f);

/**
 * 1 if the form has enough variables for its degree, 0 otherwise or NULL.
 *
 * # Safety
 * `f` must be NULL or a live handle.
 */
int32_t ad_form_admissible(const struct AdForm *f);

/**
 * Canonical text of the form, to be released with `ad_string_free`.
 *
 * # Safety
 * `f` must be a live handle and `out_text` writable.
 */
enum AdStatus ad_form_canonical(const struct AdForm *f, char **out_text);

/**
 * Value of the form at `point` (length `len`) reduced mod `q`.
 *
 * # Safety
 * `point` must hold `len` values and `out_value` be writable.
 */
enum AdStatus ad_form_evaluate_mod(const struct AdForm *f,
                                   const uint64_t *point,
                                   size_t len,
                                   uint64_t q,
                                   uint64_t *out_value);

/**
 * New histogram store. `budget` 0 takes the default; `cache_dir` may be
 * NULL for memory only.
 *
 * # Safety
 * `cache_dir` must be NULL or NUL-terminated; `out_store` writable.
 */
enum AdStatus ad_store_new(uint64_t budget, const char *cache_dir, struct AdStore **out_store);

/**
 * # Safety
 * `s` must be NULL or a handle from `ad_store_new`, freed once.
 */
void ad_store_free(struct AdStore *s);

/**
 * Local factor `N(nu; p^m) / p^{m(n-1)}` as a double.
 *
 * # Safety
 * Handles must be live and `out_value` writable.
 */
enum AdStatus ad_local_factor(const struct AdForm *f,
                              const struct AdStore *s,
                              int64_t nu,
                              uint64_t p,
                              uint32_t m,
                              double *out_value);

/**
 * Truncated singular series at `nu` for primes up to `z`. `schedule` is
 * "floor" or "plus_one"; NULL means "floor". If `out_json` is not NULL it
 * receives the per-prime breakdown.
 *
 * # Safety
 * Handles must be live, `out_value` writable.
 */
enum AdStatus ad_singular_series(const struct AdForm *f,
                                 const struct AdStore *s,
                                 int64_t nu,
                                 double z,
                                 const char *schedule,
                                 double *out_value,
                                 char **out_json);

/**
 * `sum_{x mod q} e(a f(x) / q)`.
 *
 * # Safety
 * Handles must be live and both outputs writable.
 */
enum AdStatus ad_exponential_sum(const struct AdForm *f,
                                 const struct AdStore *s,
                                 int64_t a,
                                 uint64_t q,
                                 double *out_re,
                                 double *out_im);

/**
 * Ramanujan sum `c_r(a)`.
 *
 * # Safety
 * `out_value` must be writable.
 */
enum AdStatus ad_ramanujan_sum(uint64_t r, int64_t a, int64_t *out_value);

/**
 * Modulus `W_z` of the plan as a decimal string.
 *
 * # Safety
 * `schedule` NULL or NUL-terminated; `out_text` writable.
 */
enum AdStatus ad_plan_modulus(double z, const char *schedule, char **out_text);

/**
 * Number of `(x, y) mod q` with `x^2 + y^2 = b`.
 *
 * # Safety
 * `out_value` must be writable.
 */
enum AdStatus ad_eta(uint64_t q, int64_t b, uint64_t *out_value);

/**
 * Exact shifted convolution sum over `n <= x`, `n = a mod q`.
 *
 * # Safety
 * `out_value` must be writable.
 */
enum AdStatus ad_shifted_exact(uint64_t x, uint64_t q, int64_t a, uint64_t *out_value);

/**
 * Predicted main term for `ad_shifted_exact`.
 *
 * # Safety
 * `out_value` must be writable.
 */
enum AdStatus ad_shifted_main_term(double x, uint64_t q, int64_t a, double *out_value);

/**
 * Runs an experiment config given as text and returns the report JSON.
 * `s` may be NULL for a private default store. `out_pass` (nullable) gets
 * 1 when the verdict passed or is trend-only.
 *
 * # Safety
 * `config` NUL-terminated, handles live or NULL, `out_json` writable.
 */
enum AdStatus ad_run_experiment(const char *config,
                                int32_t format,
                                const struct AdStore *s,
                                char **out_json,
                                int32_t *out_pass);

/**
 * Runs an identity suite (or "all") and returns the reports as JSON.
 *
 * # Safety
 * `name` NUL-terminated, handles live or NULL, `out_json` writable.
 */
enum AdStatus ad_run_suite(const char *name,
                           const struct AdStore *s,
                           char **out_json,
                           int32_t *out_pass);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ARITHDENSITY_H */
