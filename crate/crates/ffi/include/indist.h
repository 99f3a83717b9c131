#ifndef INDIST_H
#define INDIST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IndistStatus {
  INDIST_STATUS_OK = 0,
  INDIST_STATUS_NULL_POINTER = 1,
  // Bad argument or violated invariant.
  INDIST_STATUS_INVALID_ARGUMENT = 2,
  INDIST_STATUS_IO = 3,
  // Steady-state, extraction or other numerical failure.
  INDIST_STATUS_NUMERICAL = 4,
  INDIST_STATUS_BUFFER_TOO_SMALL = 5,
  // A Rust panic was caught at the boundary.
  INDIST_STATUS_PANIC = 6,
} IndistStatus;

typedef enum IndistRegime {
  INDIST_REGIME_CW_NORMALIZED = 0,
  INDIST_REGIME_PULSED_UNNORMALIZED = 1,
} IndistRegime;

typedef enum IndistMethod {
  INDIST_METHOD_PULSED_INTEGRAL = 0,
  INDIST_METHOD_CW_INTEGRAL = 1,
  INDIST_METHOD_CW_EXTRAPOLATED = 2,
  INDIST_METHOD_ANALYTIC = 3,
} IndistMethod;

// Opaque correlation curve on a uniform delay grid.
typedef struct IndistCurve IndistCurve;

// Opaque emitter model (Liouvillian plus dipole operator).
typedef struct IndistEmitter IndistEmitter;

// Plain-data view of an extraction result.
typedef struct IndistResult {
  double value;
  double uncertainty;
  enum IndistMethod method;
  // NaN when not applicable.
  double s_at_measurement;
  // Number of warnings attached to the result (see the last-error text).
  uint32_t n_warnings;
} IndistResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *indist_version(void);

// Message of the last failure (or warnings) on this thread; NULL if none.
// Valid until the next call into the library from this thread.
const char *indist_last_error(void);

// # Safety
// `out` must be a valid pointer to writable storage.
enum IndistStatus indist_emitter_two_level(double gamma1,
                                           double gamma_pd,
                                           double s,
                                           struct IndistEmitter **out);

// Three-level emitter driven at saturation parameter `s`, with `beta` the
// pump-level relaxation rate.
//
// # Safety
// `out` must be a valid pointer to writable storage.
enum IndistStatus indist_emitter_three_level(double gamma1,
                                             double gamma_pd,
                                             double beta,
                                             double s,
                                             struct IndistEmitter **out);

// # Safety
// `e` must be NULL or a handle from this library not yet freed.
void indist_emitter_free(struct IndistEmitter *e);

// Copies `n` samples into a new curve. The grid must be uniform.
//
// # Safety
// `tau` and `values` must point to `n` doubles; `out` must be writable.
enum IndistStatus indist_curve_new(const double *tau,
                                   const double *values,
                                   size_t n,
                                   enum IndistRegime regime,
                                   struct IndistCurve **out);

// Number of samples; 0 for NULL.
//
// # Safety
// `c` must be NULL or a live curve handle.
size_t indist_curve_len(const struct IndistCurve *c);

// Copies the grid and/or values (either may be NULL) into buffers of
// capacity `cap`.
//
// # Safety
// Non-NULL buffers must hold `cap` doubles.
enum IndistStatus indist_curve_copy(const struct IndistCurve *c,
                                    double *tau_out,
                                    double *values_out,
                                    size_t cap);

// # Safety
// `c` must be NULL or a handle from this library not yet freed.
void indist_curve_free(struct IndistCurve *c);

// HBT antibunching curve 1 − V·e^(−Γ₁(1+S)|τ|).
//
// # Safety
// `tau` must point to `n` doubles; `out` must be writable.
enum IndistStatus indist_hbt_g2(const double *tau,
                                size_t n,
                                double gamma1,
                                double s,
                                double v,
                                struct IndistCurve **out);

// Effective two-level cw interference curve; `m = 0` gives the
// perpendicular-polarization curve.
//
// # Safety
// `tau` must point to `n` doubles; `out` must be writable.
enum IndistStatus indist_cw_g2(const double *tau,
                               size_t n,
                               double gamma1,
                               double gamma_pd,
                               double s,
                               double v,
                               double m,
                               struct IndistCurve **out);

// cw interference curves of a full emitter model by quantum regression.
//
// # Safety
// `emitter` must be live, `tau` must point to `n` doubles and both outputs
// must be writable.
enum IndistStatus indist_cw_g2_numeric(const struct IndistEmitter *emitter,
                                       const double *tau,
                                       size_t n,
                                       double v,
                                       double m,
                                       struct IndistCurve **par_out,
                                       struct IndistCurve **perp_out);

// Per-pulse coincidence densities of an initially excited two-level emitter.
//
// # Safety
// `tau` must point to `n` doubles; both outputs must be writable.
enum IndistStatus indist_pulsed_g2(const double *tau,
                                   size_t n,
                                   double gamma1,
                                   double gamma_pd,
                                   struct IndistCurve **par_out,
                                   struct IndistCurve **perp_out);

// Convolves with a gaussian detector response of standard deviation `sigma`.
//
// # Safety
// `c` must be live; `out` must be writable.
enum IndistStatus indist_convolve_gaussian(const struct IndistCurve *c,
                                           double sigma,
                                           struct IndistCurve **out);

// Ĩ from the dip integrals of cw curves over `|τ| ≤ window`; `window <= 0`
// integrates the whole grid.
//
// # Safety
// Curves must be live; `out` must be writable.
enum IndistStatus indist_cw_integral_extract(const struct IndistCurve *par,
                                             const struct IndistCurve *perp,
                                             double window,
                                             struct IndistResult *out);

// Pulsed 𝓘 from the central-feature areas over `|τ| ≤ central_window`;
// `central_window <= 0` uses all data.
//
// # Safety
// Curves must be live; `out` must be writable.
enum IndistStatus indist_pulsed_extract(const struct IndistCurve *par,
                                        const struct IndistCurve *perp,
                                        double central_window,
                                        struct IndistResult *out);

// Ĩ(S) = M·Γ₁(1+S)/(Γ₁(1+S) + 2γ).
double indist_i_tilde_analytic(double s, double gamma1, double gamma_pd, double m);

// Ĩ when the parallel and perpendicular runs used drives S₁ and S₂.
double indist_i_tilde_mismatched(double s1, double s2, double gamma1, double gamma_pd);

// Divides out the visibility factor e^(−Γ₁Δτ) of an interferometer delay
// mismatch. Either output may be NULL.
//
// # Safety
// Non-NULL outputs must be writable.
enum IndistStatus indist_delay_mismatch_correction(double i_raw,
                                                   double gamma1,
                                                   double delta_tau,
                                                   double *corrected_out,
                                                   double *factor_out);

// Fits Ĩ(S) with M free and γ fixed, returning 𝓘 = Ĩ(0). `sigma` may be
// NULL for an unweighted fit.
//
// # Safety
// `s` and `i_tilde` (and `sigma` if given) must point to `n` doubles.
enum IndistStatus indist_extrapolate_to_zero(const double *s,
                                             const double *i_tilde,
                                             const double *sigma,
                                             size_t n,
                                             double gamma1,
                                             double gamma_pd,
                                             struct IndistResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INDIST_H */
