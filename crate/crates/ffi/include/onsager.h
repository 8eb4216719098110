#ifndef ONSAGER_H
#define ONSAGER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Source of the kernel coefficients for [`onsager_kernel_new`].
 */
typedef enum OnsagerKernelSource {
  ONSAGER_KERNEL_SOURCE_QUADRATURE = 0,
  ONSAGER_KERNEL_SOURCE_RECURRENCE = 1,
} OnsagerKernelSource;

/**
 * Iteration used by [`onsager_solve`].
 */
typedef enum OnsagerMethod {
  ONSAGER_METHOD_NEWTON = 0,
  ONSAGER_METHOD_PICARD = 1,
} OnsagerMethod;

/**
 * Result codes.
 */
typedef enum OnsagerStatus {
  ONSAGER_STATUS_OK = 0,
  /**
   * A null pointer, bad length or out-of-range parameter.
   */
  ONSAGER_STATUS_INVALID_ARGUMENT = 1,
  /**
   * The caller's buffer is too short; the required length is reported.
   */
  ONSAGER_STATUS_BUFFER_TOO_SMALL = 2,
  /**
   * Loss of accuracy, overflow, singular Jacobian or similar.
   */
  ONSAGER_STATUS_NUMERICAL = 3,
  /**
   * The solver stopped before reaching the tolerance.
   */
  ONSAGER_STATUS_NOT_CONVERGED = 4,
  /**
   * An internal panic was caught.
   */
  ONSAGER_STATUS_INTERNAL = 5,
} OnsagerStatus;

/**
 * Opaque kernel handle.
 */
typedef struct OnsagerKernel OnsagerKernel;

/**
 * Uniqueness thresholds of a kernel.
 */
typedef struct OnsagerThresholds {
  double lambda_tilde0;
  double lambda_0_lower;
  double lambda_0_upper;
  double lambda_contraction;
  double partial_sum;
  double tail_bound;
  double sup_norm_khat;
} OnsagerThresholds;

/**
 * Summary of one solve.
 */
typedef struct OnsagerSolveInfo {
  double residual_norm;
  double sup_norm_u;
  size_t iterations;
  bool converged;
  /**
   * `sign det(I - J)`, or 0 when it was not determined.
   */
  int32_t index;
} OnsagerSolveInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *onsager_last_error(void);

/**
 * Dimension of the degree-`n` spherical harmonics on `S^{dim-1}`.
 *
 * # Safety
 * `out` must be null or point to writable memory.
 */
enum OnsagerStatus onsager_harmonic_count(uint32_t dim, uint32_t n, uint64_t *out);

/**
 * Normalized Legendre polynomial `P_n(dim, t)` with `P_n(1) = 1`.
 *
 * # Safety
 * `out` must be null or point to writable memory.
 */
enum OnsagerStatus onsager_legendre_eval(uint32_t dim, uint32_t n, double t, double *out);

/**
 * Builds the Onsager kernel with modes `1..=n_max`.
 *
 * # Safety
 * `out` must be null or point to writable memory.
 */
enum OnsagerStatus onsager_kernel_new(uint32_t dim,
                                      size_t n_max,
                                      enum OnsagerKernelSource source,
                                      struct OnsagerKernel **out);

/**
 * Builds a kernel from coefficients `k_1..k_len` and mean `k0`.
 *
 * # Safety
 * `coeffs` must point to `len` readable values; `out` must be writable.
 */
enum OnsagerStatus onsager_kernel_custom(uint32_t dim,
                                         double k0,
                                         const double *coeffs,
                                         size_t len,
                                         struct OnsagerKernel **out);

/**
 * Loads a kernel from its JSON form.
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
enum OnsagerStatus onsager_kernel_from_json(const char *json, struct OnsagerKernel **out);

/**
 * Releases a kernel; null is ignored.
 *
 * # Safety
 * `kernel` must come from an `onsager_kernel_*` constructor and not be used
 * afterwards.
 */
void onsager_kernel_free(struct OnsagerKernel *kernel);

/**
 * Number of modes of the kernel, or 0 for a null handle.
 *
 * # Safety
 * `kernel` must be null or a live handle.
 */
size_t onsager_kernel_n_max(const struct OnsagerKernel *kernel);

/**
 * Copies `k_1..k_N` into `buf`; `written` (optional) receives `N`.
 *
 * # Safety
 * `kernel` must be a live handle; `buf` must hold `len` values.
 */
enum OnsagerStatus onsager_kernel_coeffs(const struct OnsagerKernel *kernel,
                                         double *buf,
                                         size_t len,
                                         size_t *written);

/**
 * Evaluates `K̂(γ) = -Σ k_n P_{2n}(cos γ)`.
 *
 * # Safety
 * `kernel` must be a live handle; `out` must be writable.
 */
enum OnsagerStatus onsager_kernel_khat(const struct OnsagerKernel *kernel,
                                       double gamma,
                                       double *out);

/**
 * JSON form of the kernel; release with [`onsager_string_free`].
 *
 * # Safety
 * `kernel` must be a live handle; `out` must be writable.
 */
enum OnsagerStatus onsager_kernel_to_json(const struct OnsagerKernel *kernel, char **out);

/**
 * Releases a string returned by this library; null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void onsager_string_free(char *s);

/**
 * Critical concentrations `λ_n = N(D,2n)/k_n`, `n = 1..N`.
 *
 * # Safety
 * `kernel` must be a live handle; `buf` must hold `len` values.
 */
enum OnsagerStatus onsager_critical_values(const struct OnsagerKernel *kernel,
                                           double *buf,
                                           size_t len,
                                           size_t *written);

/**
 * Uniqueness thresholds of the kernel.
 *
 * # Safety
 * `kernel` must be a live handle; `out` must be writable.
 */
enum OnsagerStatus onsager_thresholds(const struct OnsagerKernel *kernel,
                                      struct OnsagerThresholds *out);

/**
 * Solves `u = λ G(u)` from the initial coefficients `coeffs[0..n]`
 * (`n = N`, or 0 for the zero start) and overwrites them with the result.
 * Returns `NotConverged` (with `info` filled) when the tolerance is missed.
 *
 * # Safety
 * `kernel` must be a live handle; `coeffs` must hold `n` values; `info` must
 * be writable.
 */
enum OnsagerStatus onsager_solve(const struct OnsagerKernel *kernel,
                                 double lambda,
                                 enum OnsagerMethod method,
                                 double tol,
                                 size_t max_iter,
                                 double *coeffs,
                                 size_t n,
                                 struct OnsagerSolveInfo *info);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ONSAGER_H */
