#ifndef TDX_H
#define TDX_H

/* This file is generated by cbindgen from the tdx-ffi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of an FFI call.
 */
typedef enum {
  TDX_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  TDX_STATUS_NULL_ARGUMENT = 1,
  /**
   * Arguments failed validation.
   */
  TDX_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The fit or evaluation failed numerically.
   */
  TDX_STATUS_NUMERICAL_ERROR = 3,
  /**
   * A JSON document did not parse or did not match the schema.
   */
  TDX_STATUS_PARSE_ERROR = 4,
  /**
   * A string argument was not valid UTF-8.
   */
  TDX_STATUS_UTF8_ERROR = 5,
  /**
   * A panic was caught at the boundary.
   */
  TDX_STATUS_INTERNAL_ERROR = 6,
} TdxStatus;

/**
 * Opaque fitted model.
 */
typedef struct TdxModelHandle TdxModelHandle;

/**
 * Solver settings for the fitting entry points.
 */
typedef struct {
  /**
   * Gradient infinity-norm stopping tolerance.
   */
  double optimality_tolerance;
  size_t max_iterations;
  /**
   * Number of multistart points; the first is always the zero matrix.
   */
  size_t n_starts;
  /**
   * Random starts draw coefficients uniformly from this bound.
   */
  double artificial_bound;
  uint64_t seed;
} TdxSolverOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or null. The
 * pointer is valid until the next tdx call on the same thread.
 */
const char *tdx_last_error_message(void);

/**
 * Default solver options: tolerance 1e-4, 500 iterations, 4 starts,
 * artificial bound 2, seed 0.
 */
TdxSolverOptions tdx_solver_options_default(void);

/**
 * Fits the drift-aware model on `n` observations.
 *
 * `xs` and `ts` must point to `n` doubles; times must lie in [0, 1].
 * On success `*out_model` owns the model; release it with
 * `tdx_model_free`.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
TdxStatus tdx_fit(const double *xs,
                  const double *ts,
                  size_t n,
                  size_t m,
                  double h,
                  size_t r,
                  double lambda,
                  double kappa,
                  TdxSolverOptions options,
                  TdxModelHandle **out_model);

/**
 * Fits the static variant (order 0, unweighted, unregularized).
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
TdxStatus tdx_fit_static(const double *xs,
                         const double *ts,
                         size_t n,
                         size_t m,
                         double h,
                         TdxSolverOptions options,
                         TdxModelHandle **out_model);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must have come from this library and not be freed twice.
 */
void tdx_model_free(TdxModelHandle *model);

/**
 * Number of basis functions of the model.
 *
 * # Safety
 * `model` must be a live handle.
 */
TdxStatus tdx_model_basis_size(const TdxModelHandle *model, size_t *out_m);

/**
 * Density estimate at `(x, t)`. `t` may lie outside the training window.
 *
 * # Safety
 * `model` must be a live handle; `out_density` must be writable.
 */
TdxStatus tdx_density_at(const TdxModelHandle *model, double x, double t, double *out_density);

/**
 * Density along `grid` (length `len`) at time `t`, written to
 * `out_values` (also length `len`).
 *
 * # Safety
 * Pointers must be valid for `len` doubles.
 */
TdxStatus tdx_density_curve(const TdxModelHandle *model,
                            double t,
                            const double *grid,
                            size_t len,
                            double *out_values);

/**
 * Mixture weights at time `t`, written to `out_weights` (length `len`,
 * which must equal the basis size).
 *
 * # Safety
 * Pointers must be valid for `len` doubles.
 */
TdxStatus tdx_weights_at(const TdxModelHandle *model, double t, double *out_weights, size_t len);

/**
 * Serializes the model to its JSON document. The returned string must be
 * released with `tdx_string_free`.
 *
 * # Safety
 * `model` must be a live handle; `out_json` must be writable.
 */
TdxStatus tdx_model_to_json(const TdxModelHandle *model, char **out_json);

/**
 * Parses a model from its JSON document.
 *
 * # Safety
 * `json` must be a nul-terminated string; `out_model` must be writable.
 */
TdxStatus tdx_model_from_json(const char *json, TdxModelHandle **out_model);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must have come from this library and not be freed twice.
 */
void tdx_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TDX_H */
