#ifndef NDS_H
#define NDS_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NdsStatus {
  NDS_STATUS_OK = 0,
  NDS_STATUS_NULL_POINTER = 1,
  NDS_STATUS_INVALID_UTF8 = 2,
  NDS_STATUS_PARSE = 3,
  NDS_STATUS_NOT_CONTRACTING = 4,
  NDS_STATUS_NUMERICAL = 5,
  NDS_STATUS_SMALL_GAIN_VIOLATED = 6,
  NDS_STATUS_INVALID_ARGUMENT = 7,
  NDS_STATUS_PANIC = 8,
} NdsStatus;

typedef enum NdsBlock {
  NDS_BLOCK_FULL = 0,
  NDS_BLOCK_FAST = 1,
  NDS_BLOCK_SLOW = 2,
} NdsBlock;

/**
 * Compiled system handle.
 */
typedef struct NdsSystem NdsSystem;

/**
 * Contraction result. When certification fails with
 * `NotContracting`, `worst_lambda` holds the offending eigenvalue and
 * `beta` its negation.
 */
typedef struct NdsCertificate {
  double beta;
  double chi;
  double worst_lambda;
  size_t samples;
} NdsCertificate;

typedef struct NdsGainConstants {
  double d_f;
  double alpha_fx;
  double alpha_fy;
  double d_g;
  double alpha_gx;
  double chi_f;
  double beta_f;
  double chi_g;
  double beta_g;
  double m_bar;
  double delta_offset;
} NdsGainConstants;

/**
 * `amplitude · exp(-rate t) + asymptote`.
 */
typedef struct NdsBoundCurve {
  double amplitude;
  double rate;
  double asymptote;
} NdsBoundCurve;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into the library on the same thread.
 */
const char *nds_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *nds_version(void);

/**
 * Parse and compile system source text.
 *
 * # Safety
 * `src` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NdsStatus nds_system_parse(const char *src, struct NdsSystem **out);

/**
 * Release a handle from [`nds_system_parse`]. Null is ignored.
 *
 * # Safety
 * `sys` must come from [`nds_system_parse`] and not be used afterwards.
 */
void nds_system_free(struct NdsSystem *sys);

/**
 * State counts. Any output pointer may be null.
 *
 * # Safety
 * `sys` must be a live handle; non-null outputs must be valid.
 */
enum NdsStatus nds_system_dim(const struct NdsSystem *sys,
                              size_t *n_states,
                              size_t *n_fast,
                              size_t *n_slow);

/**
 * Set the perturbation parameter.
 *
 * # Safety
 * `sys` must be a live handle.
 */
enum NdsStatus nds_system_set_epsilon(struct NdsSystem *sys, double epsilon);

/**
 * `out = F(x, t)`; `x` and `out` hold `n` entries.
 *
 * # Safety
 * `x` and `out` must point to `n` doubles.
 */
enum NdsStatus nds_system_eval(const struct NdsSystem *sys,
                               const double *x,
                               size_t n,
                               double t,
                               double *out);

/**
 * Row-major `n × n` Jacobian at `(x, t)`.
 *
 * # Safety
 * `x` must point to `n` doubles and `out` to `n * n`.
 */
enum NdsStatus nds_system_jacobian(const struct NdsSystem *sys,
                                   const double *x,
                                   size_t n,
                                   double t,
                                   double *out);

/**
 * Certify `block` over the system's domain. `metric` is `identity`,
 * `diag:a,b,...` or `matrix:a,b;c,d`; null means identity.
 *
 * # Safety
 * `sys` must be a live handle, `metric` null or a NUL-terminated string.
 */
enum NdsStatus nds_certify(const struct NdsSystem *sys,
                           enum NdsBlock block,
                           const char *metric,
                           size_t samples,
                           struct NdsCertificate *out);

/**
 * Critical perturbation `ε_c`; `+inf` when the subsystems are decoupled.
 *
 * # Safety
 * Pointers must be valid.
 */
enum NdsStatus nds_epsilon_critical(const struct NdsGainConstants *gains, double *out);

/**
 * Envelope for a disturbance bounded by `d_sup`.
 *
 * # Safety
 * `out` must be valid.
 */
enum NdsStatus nds_lemma1_bound(double beta,
                                double chi,
                                double r0,
                                double d_sup,
                                struct NdsBoundCurve *out);

/**
 * Envelope for `|d| ≤ k0 + kx |x|` around a nominal trajectory bounded by
 * `x00`. Returns `SmallGainViolated` when `β ≤ χ kx`.
 *
 * # Safety
 * `out` must be valid.
 */
enum NdsStatus nds_lemma2_bound(double beta,
                                double chi,
                                double r0,
                                double k0,
                                double kx,
                                double x00,
                                struct NdsBoundCurve *out);

double nds_bound_eval(struct NdsBoundCurve curve, double t);

/**
 * Fast-error bound and slow-error envelope for `ε < ε_c`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum NdsStatus nds_lemma3_bounds(const struct NdsGainConstants *gains,
                                 double epsilon,
                                 double x_tilde0,
                                 double *m_xtilde,
                                 struct NdsBoundCurve *ytilde);

/**
 * Boundary-layer and total transient times for `0 < ε < 1`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum NdsStatus nds_transient_time(double beta_f,
                                  double beta_g,
                                  double epsilon,
                                  double *t_fast,
                                  double *t_total);

/**
 * Full reduction report as JSON. `gains` may be null to fit constants
 * from samples. Free the string with [`nds_string_free`].
 *
 * # Safety
 * `sys` must be a live handle and `out` valid.
 */
enum NdsStatus nds_reduce_json(const struct NdsSystem *sys,
                               const struct NdsGainConstants *gains,
                               size_t samples,
                               char **out);

/**
 * Release a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void nds_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NDS_H */
