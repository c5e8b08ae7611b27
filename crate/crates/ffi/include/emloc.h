#ifndef EMLOC_H
#define EMLOC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EmlocStatus {
  EMLOC_STATUS_OK = 0,
  EMLOC_STATUS_NULL_POINTER = 1,
  EMLOC_STATUS_INVALID_ARGUMENT = 2,
  EMLOC_STATUS_CONFIG = 3,
  EMLOC_STATUS_RESONANT = 4,
  EMLOC_STATUS_RESIDUAL = 5,
  EMLOC_STATUS_IO = 6,
  EMLOC_STATUS_CHECK_FAILED = 7,
  EMLOC_STATUS_NUMERICAL = 8,
  EMLOC_STATUS_BUFFER_TOO_SMALL = 9,
  EMLOC_STATUS_PANIC = 10,
} EmlocStatus;

/**
 * Region selector for energy queries.
 */
typedef enum EmlocRegion {
  EMLOC_REGION_TARGET = 0,
  EMLOC_REGION_SHIELDED = 1,
  EMLOC_REGION_OBSERVATION = 2,
} EmlocRegion;

/**
 * Parsed, validated experiment configuration.
 */
typedef struct EmlocConfig EmlocConfig;

/**
 * Assembled and factorized forward problem for one configuration.
 */
typedef struct EmlocProblem EmlocProblem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *emloc_version(void);

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into the library.
 */
const char *emloc_last_error(void);

/**
 * Parses configuration text. On success `*out` owns a new handle.
 */
enum EmlocStatus emloc_config_parse(const char *text, struct EmlocConfig **out);

/**
 * Applies a `key=value` override such as `mesh.divisions=[3,3,3]`.
 */
enum EmlocStatus emloc_config_set(struct EmlocConfig *cfg, const char *assignment);

/**
 * Canonical TOML text of the configuration. Free with [`emloc_string_free`].
 */
enum EmlocStatus emloc_config_to_string(const struct EmlocConfig *cfg, char **out);

void emloc_config_free(struct EmlocConfig *cfg);

void emloc_string_free(char *s);

/**
 * Runs the configured experiment, writing reports into `out_dir`.
 * `*passed` reports whether every internal check held.
 */
enum EmlocStatus emloc_run(const struct EmlocConfig *cfg, const char *out_dir, bool *passed);

/**
 * Cavity resonances below `k_max` on the configured mesh, ascending.
 * Writes at most `capacity` values and the full count to `*count`; returns
 * `BUFFER_TOO_SMALL` when the buffer cannot hold them all.
 */
enum EmlocStatus emloc_resonances(const struct EmlocConfig *cfg,
                                  double k_max,
                                  double *out,
                                  size_t capacity,
                                  size_t *count);

/**
 * Assembles and factorizes the forward problem with data on the
 * configured boundary patch and selects the M, D and O regions.
 */
enum EmlocStatus emloc_problem_new(const struct EmlocConfig *cfg, struct EmlocProblem **out);

void emloc_problem_free(struct EmlocProblem *p);

/**
 * Number of boundary coefficients; 0 for a null handle.
 */
size_t emloc_problem_n_control(const struct EmlocProblem *p);

/**
 * Field energy on a region for boundary data `re + i·im` (`im` may be null).
 */
enum EmlocStatus emloc_problem_energy(const struct EmlocProblem *p,
                                      const double *re,
                                      const double *im,
                                      size_t len,
                                      enum EmlocRegion region,
                                      double *energy);

/**
 * Localized boundary data. Writes the energy ratio to `*lambda` and the
 * target and shielded energies of the configured sequence length into
 * `energy_m` and `energy_d` (each `capacity` long). Optional `f_re`/`f_im`
 * receive the first sequence element (length `n_control`).
 */
enum EmlocStatus emloc_problem_localize(const struct EmlocProblem *p,
                                        double *lambda,
                                        double *energy_m,
                                        double *energy_d,
                                        size_t capacity,
                                        double *f_re,
                                        double *f_im);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMLOC_H */
