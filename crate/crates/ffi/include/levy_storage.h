#ifndef LEVY_STORAGE_H
#define LEVY_STORAGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Status code returned by every fallible function.
 */
typedef enum LsStatus {
  LS_STATUS_OK = 0,
  LS_STATUS_NULL_POINTER = 1,
  LS_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed argument (wrong length, non-finite value).
   */
  LS_STATUS_INPUT = 3,
  /**
   * Argument outside the domain of the operation.
   */
  LS_STATUS_PRECONDITION = 4,
  /**
   * Invalid model or unsupported model feature.
   */
  LS_STATUS_MODEL = 5,
  /**
   * Invalid configuration or JSON.
   */
  LS_STATUS_CONFIG = 6,
  LS_STATUS_IO = 7,
  LS_STATUS_INTERNAL = 8,
  LS_STATUS_PANIC = 9,
} LsStatus;

/**
 * Experiment handle.
 */
typedef struct LsExperiment LsExperiment;

/**
 * Lévy model handle.
 */
typedef struct LsModel LsModel;

/**
 * Monte Carlo report handle.
 */
typedef struct LsReport LsReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *ls_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ls_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void ls_string_free(char *s);

/**
 * Parses a model from JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LsStatus ls_model_from_json(const char *json, struct LsModel **out);

/**
 * # Safety
 * `model` must come from [`ls_model_from_json`] and not have been freed.
 */
void ls_model_free(struct LsModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum LsStatus ls_model_dim(const struct LsModel *model, size_t *out);

/**
 * Laplace exponent `log E exp(-alpha'X(1))`.
 *
 * # Safety
 * `alpha` must point to `len` doubles and `out` must be valid.
 */
enum LsStatus ls_model_phi(const struct LsModel *model,
                           const double *alpha,
                           size_t len,
                           double *out);

/**
 * Characteristic exponent `log E exp(i alpha'X(1))` as real and imaginary parts.
 *
 * # Safety
 * `alpha` must point to `len` doubles; `re` and `im` must be valid.
 */
enum LsStatus ls_model_psi(const struct LsModel *model,
                           const double *alpha,
                           size_t len,
                           double *re,
                           double *im);

/**
 * Writes `E X(1)` into `out`, which must hold `len == dim` doubles.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum LsStatus ls_model_mean(const struct LsModel *model, double *out, size_t len);

/**
 * Compensator rate `phi(2i) - 2 phi(i)` for the integrand value `i`.
 *
 * # Safety
 * `i_vec` must point to `len` doubles and `out` must be valid.
 */
enum LsStatus ls_model_compensator_rate(const struct LsModel *model,
                                        const double *i_vec,
                                        size_t len,
                                        double *out);

/**
 * Builds an experiment from a JSON config, as accepted by the CLI.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LsStatus ls_experiment_from_json(const char *json, struct LsExperiment **out);

/**
 * Builds an experiment from a bundled fixture.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LsStatus ls_experiment_from_fixture(const char *name, struct LsExperiment **out);

/**
 * Changes the number of replications (at least 2; otherwise `Config`).
 *
 * # Safety
 * `exp` must be a live handle.
 */
enum LsStatus ls_experiment_set_replications(struct LsExperiment *exp, size_t replications);

/**
 * # Safety
 * `exp` must be a live handle.
 */
enum LsStatus ls_experiment_set_seed(struct LsExperiment *exp, uint64_t seed);

/**
 * # Safety
 * `exp` must come from this library and not have been freed.
 */
void ls_experiment_free(struct LsExperiment *exp);

/**
 * Runs the experiment. `threads == 0` uses the available parallelism.
 *
 * # Safety
 * `exp` must be a live handle and `out` a valid pointer.
 */
enum LsStatus ls_experiment_run(const struct LsExperiment *exp,
                                size_t threads,
                                bool deterministic_reduce,
                                struct LsReport **out);

/**
 * Global verdict of a report.
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
enum LsStatus ls_report_passed(const struct LsReport *report, bool *out);

/**
 * Report as CSV (no timestamp line). Free with [`ls_string_free`].
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
enum LsStatus ls_report_csv(const struct LsReport *report, char **out);

/**
 * Human-readable summary. Free with [`ls_string_free`].
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
enum LsStatus ls_report_summary(const struct LsReport *report, char **out);

/**
 * # Safety
 * `report` must come from this library and not have been freed.
 */
void ls_report_free(struct LsReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LEVY_STORAGE_H */
