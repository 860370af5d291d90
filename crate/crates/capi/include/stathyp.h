/* C interface for the stathyp library.
 *
 * Written by hand and kept in sync with the Rust exports by a library test.
 *
 * Conventions:
 *   - every function returns a status code (STATHYP_OK on success),
 *   - results are written through out-pointers,
 *   - on a nonzero status, stathyp_last_error() returns a message for the
 *     calling thread, valid until that thread's next library call,
 *   - handles are created and destroyed only by this library.
 */

#ifndef STATHYP_H
#define STATHYP_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. */
#define STATHYP_OK 0
/* A required pointer argument was null. */
#define STATHYP_ERR_NULL 1
/* A string argument was not valid UTF-8. */
#define STATHYP_ERR_UTF8 2
/* Invalid parameter (unknown builtin, bad base point, bad estimator input). */
#define STATHYP_ERR_PARAM 3
/* The estimator ran and failed (non-convergence budget exceeded). */
#define STATHYP_ERR_ESTIMATOR 4
/* Internal panic; the library state is still valid. */
#define STATHYP_ERR_PANIC 5

/* Opaque handle around a finitely supported isometry distribution. */
typedef struct StathypDistribution StathypDistribution;

/* One Monte Carlo estimate. */
typedef struct StathypEstimate {
    double mean;
    /* trailing underscore avoids the stdio stderr macro; layout unchanged */
    double stderr_;
    uint64_t n_samples;
    uint64_t n_failures;
} StathypEstimate;

/* Library version as a static NUL-terminated string. */
const char *stathyp_version(void);

/* Message for the calling thread's most recent failure; empty after a
 * success. Valid until the thread's next call into the library. */
const char *stathyp_last_error(void);

/* Create a distribution from a builtin name: "psl2z-uniform-TTS",
 * "parabolic-pointmass", or "hyperbolic-pointmass(l)" with l > 0. */
int32_t stathyp_distribution_builtin(const char *name,
                                     StathypDistribution **out);

/* Destroy a distribution handle. Null is a no-op. */
void stathyp_distribution_free(StathypDistribution *d);

/* E-estimate at radius r from n_pairs coupled harmonic pairs, base point
 * re + im*i in the upper half-plane. */
int32_t stathyp_estimate_e(const StathypDistribution *d, double re, double im,
                           double r, uint64_t n_pairs, uint64_t seed,
                           StathypEstimate *out);

/* Drift estimate d(x, w_n x)/n over n_samples walks of n steps. */
int32_t stathyp_estimate_drift(const StathypDistribution *d, double re,
                               double im, uint64_t n, uint64_t n_samples,
                               uint64_t seed, StathypEstimate *out);

/* Recurrence estimates: frequency of R-recurrence times along n steps, and
 * the fraction of paths within R/3 of their tracked geodesic at time 0. */
int32_t stathyp_recurrence(const StathypDistribution *d, double re, double im,
                           double big_r, uint64_t n, uint64_t n_samples,
                           uint64_t seed, StathypEstimate *out_freq,
                           StathypEstimate *out_lambda);

/* Probability that coupled ray pairs stay m_sep-separated on [eta r, r],
 * checked on a grid of spacing delta. */
int32_t stathyp_separation(const StathypDistribution *d, double re, double im,
                           double m_sep, double eta, double r,
                           uint64_t n_pairs, double delta, uint64_t seed,
                           StathypEstimate *out);

#ifdef __cplusplus
}
#endif

#endif /* STATHYP_H */
