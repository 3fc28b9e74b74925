#ifndef SCALEBUDGET_H
#define SCALEBUDGET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

#define SB_OK 0

#define SB_ERR_NULL_POINTER 1

#define SB_ERR_INVALID_ARGUMENT 2

#define SB_ERR_NUMERIC 3

#define SB_ERR_IO 4

#define SB_ERR_BUFFER_TOO_SMALL 5

#define SB_ERR_PANIC 6

#define SB_PRESET_HOFFMANN 0

#define SB_PRESET_BESIROGLU 1

#define SB_STRATEGY_UA 0

#define SB_STRATEGY_SH 1

#define SB_STRATEGY_SH_LMC 2

#define SB_STRATEGY_SH_DE_PL 3

#define SB_STRATEGY_SH_DE_EXP 4

#define SB_STRATEGY_SH_DE_MMF 5

/**
 * Opaque collection of learning curves.
 */
typedef struct SbCurveSet SbCurveSet;

/**
 * Opaque allocation trace.
 */
typedef struct SbTrace SbTrace;

/**
 * Five coefficients of L(N, D) = n_c / N^alpha_n + d_c / D^beta_d + e.
 */
typedef struct SbChinchilla {
  double n_c;
  double d_c;
  double e;
  double alpha_n;
  double beta_d;
} SbChinchilla;

/**
 * L(C) = (C / alpha)^(-gamma) over [region_lo, region_hi].
 */
typedef struct SbLaw {
  double alpha;
  double gamma;
  double region_lo;
  double region_hi;
} SbLaw;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *sb_last_error(void);

/**
 * Coefficients of a named surface.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `SbChinchilla`.
 */
int32_t sb_preset(int32_t preset_code, struct SbChinchilla *out_params);

/**
 * L(N, D) for `n` parameters and `d` tokens.
 *
 * # Safety
 * `params` must be null or point to a valid `SbChinchilla`; `out_loss`
 * must be null or writable.
 */
int32_t sb_loss_surface(const struct SbChinchilla *params, double n, double d, double *out_loss);

struct SbCurveSet *sb_curveset_new(void);

/**
 * Reads a curve file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out_set` must be writable. On
 * success `*out_set` owns a new handle.
 */
int32_t sb_curveset_load(const char *path, struct SbCurveSet **out_set);

/**
 * Writes a curve file.
 *
 * # Safety
 * `set` must be a live handle and `path` a nul-terminated string.
 */
int32_t sb_curveset_save(const struct SbCurveSet *set, const char *path);

/**
 * Adds one trained curve. Compute must be strictly increasing.
 *
 * # Safety
 * `set` must be a live handle, `id` a nul-terminated string, and
 * `compute` / `loss` arrays of at least `len` doubles.
 */
int32_t sb_curveset_add(struct SbCurveSet *set,
                        const char *id,
                        uint64_t n_params,
                        uint64_t tokens_per_step,
                        const double *compute,
                        const double *loss,
                        size_t len);

/**
 * Number of curves, or 0 for a null handle.
 *
 * # Safety
 * `set` must be null or a live handle.
 */
size_t sb_curveset_len(const struct SbCurveSet *set);

/**
 * # Safety
 * `set` must be null or a handle not yet freed.
 */
void sb_curveset_free(struct SbCurveSet *set);

/**
 * Fits L(C) to the efficient frontier of the trained curves in `set`.
 *
 * # Safety
 * `set` must be a live handle; `out_law` must be writable.
 */
int32_t sb_fit_law(const struct SbCurveSet *set,
                   double region_lo,
                   double region_hi,
                   struct SbLaw *out_law);

/**
 * Loss predicted by `law` at `compute`; NaN for a null law.
 *
 * # Safety
 * `law` must be null or point to a valid `SbLaw`.
 */
double sb_law_eval(const struct SbLaw *law, double compute);

/**
 * Area between two laws: integral of |ln L_a - ln L_b| over log10 compute.
 *
 * # Safety
 * `a` and `b` must point to valid laws; `out_abc` must be writable.
 */
int32_t sb_abc(const struct SbLaw *a,
               const struct SbLaw *b,
               double region_lo,
               double region_hi,
               double *out_abc);

/**
 * Huber fit of L(N, D) to `len` observations.
 *
 * # Safety
 * `n`, `d` and `loss` must hold `len` doubles each; `out_params` must be
 * writable; `out_objective` may be null.
 */
int32_t sb_fit_lnd(const double *n,
                   const double *d,
                   const double *loss,
                   size_t len,
                   uint64_t seed,
                   struct SbChinchilla *out_params,
                   double *out_objective);

/**
 * Allocates `budget_flops` over synthetic models of the given sizes,
 * drawn noise-free from a preset surface.
 *
 * # Safety
 * `sizes` must hold `count` values; `out_trace` must be writable. On
 * success `*out_trace` owns a new handle.
 */
int32_t sb_run_sh_synthetic(int32_t preset_code,
                            const uint64_t *sizes,
                            size_t count,
                            double budget_flops,
                            uint32_t eta,
                            int32_t strategy_code,
                            uint64_t seed,
                            struct SbTrace **out_trace);

/**
 * Allocates `budget_flops` over every curve in `set`, slicing the
 * recorded curves as compute is granted.
 *
 * # Safety
 * `set` must be a live handle; `out_trace` must be writable.
 */
int32_t sb_run_sh_recorded(const struct SbCurveSet *set,
                           double budget_flops,
                           uint32_t eta,
                           int32_t strategy_code,
                           uint64_t seed,
                           struct SbTrace **out_trace);

/**
 * Lowest trained loss and the model that reached it.
 *
 * # Safety
 * `trace` must be a live handle; `out_loss` writable; `id_buf` may be
 * null only if `id_cap` is 0 and `id_needed` is used to size it.
 */
int32_t sb_trace_best(const struct SbTrace *trace,
                      double *out_loss,
                      char *id_buf,
                      size_t id_cap,
                      size_t *id_needed);

/**
 * FLOPs consumed; 0 for a null handle.
 *
 * # Safety
 * `trace` must be null or a live handle.
 */
double sb_trace_spent(const struct SbTrace *trace);

/**
 * # Safety
 * `trace` must be null or a live handle.
 */
size_t sb_trace_round_count(const struct SbTrace *trace);

/**
 * Pool size at the start of `round`.
 *
 * # Safety
 * `trace` must be a live handle; `out_size` writable.
 */
int32_t sb_trace_pool_size(const struct SbTrace *trace, size_t round, size_t *out_size);

/**
 * Trained curves of the trace as a new curve-set handle.
 *
 * # Safety
 * `trace` must be a live handle; `out_set` writable.
 */
int32_t sb_trace_curves(const struct SbTrace *trace, struct SbCurveSet **out_set);

/**
 * The whole trace as JSON.
 *
 * # Safety
 * `trace` must be a live handle; `buf` must hold `cap` bytes; `needed`
 * may be null.
 */
int32_t sb_trace_json(const struct SbTrace *trace, char *buf, size_t cap, size_t *needed);

/**
 * # Safety
 * `trace` must be null or a handle not yet freed.
 */
void sb_trace_free(struct SbTrace *trace);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCALEBUDGET_H */
