#ifndef ADASEL_H
#define ADASEL_H

/* Generated by cbindgen from adasel-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Baseline sampler choices for `adasel_select`.
 */
typedef enum {
  AdaselSamplerSubmodular = 0,
  AdaselSamplerRandom = 1,
  AdaselSamplerEntropy = 2,
  AdaselSamplerMargin = 3,
  AdaselSamplerKCenter = 4,
  AdaselSamplerAada = 5,
  AdaselSamplerBadge = 6,
} AdaselSampler;

/**
 * Status codes returned by every entry point.
 */
typedef enum {
  AdaselOk = 0,
  AdaselNullPointer = 1,
  AdaselInvalidArgument = 2,
  AdaselIoError = 3,
  AdaselNumericError = 4,
  AdaselPanic = 5,
} AdaselStatus;

/**
 * Opaque candidate pool handle.
 */
typedef struct AdaselPool AdaselPool;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the most recent error message for this thread into `buf`
 * (truncated, always NUL-terminated). Returns the full message length in
 * bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must point to `len` writable bytes, or be null (to query the
 * length).
 */
uintptr_t adasel_last_error(char *buf, uintptr_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *adasel_version(void);

/**
 * Loads a pool from a score CSV with its `.meta.json` sidecar.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
 */
AdaselStatus adasel_pool_from_scores_csv(const char *path, AdaselPool **out);

/**
 * Builds a pool from row-major arrays: `originals` is `n x classes`,
 * `perturbed` is `n x n_restarts x classes`. Ids are `0..n`.
 *
 * # Safety
 * The arrays must hold the stated number of elements; `out` must be valid.
 */
AdaselStatus adasel_pool_from_arrays(uintptr_t n,
                                     uintptr_t classes,
                                     uintptr_t n_restarts,
                                     const double *originals,
                                     const double *perturbed,
                                     AdaselPool **out);

/**
 * Attaches `n x dim` row-major embeddings (needed by the k-center and badge
 * samplers).
 *
 * # Safety
 * `pool` must come from a constructor; `data` must hold `len(pool) * dim`
 * values.
 */
AdaselStatus adasel_pool_set_embeddings(AdaselPool *pool, uintptr_t dim, const double *data);

/**
 * Attaches per-candidate discriminator outputs in [0, 1] (needed by the
 * aada sampler).
 *
 * # Safety
 * `pool` must come from a constructor; `data` must hold `len(pool)` values.
 */
AdaselStatus adasel_pool_set_discriminator(AdaselPool *pool, const double *data);

/**
 * Number of candidates in the pool (0 for a null handle).
 *
 * # Safety
 * `pool` must be null or a live handle.
 */
uintptr_t adasel_pool_len(const AdaselPool *pool);

/**
 * Frees a pool handle (null is a no-op).
 *
 * # Safety
 * `pool` must be null or a handle not freed before.
 */
void adasel_pool_free(AdaselPool *pool);

/**
 * Runs the submodular selector: `budget` picks by greedy maximization of
 * the convex combination `alpha * uncertainty + beta * diversity +
 * (1 - alpha - beta) * representativeness`. Selected ids land in `out_ids`
 * (length `budget`), per-step gains in `out_gains` when non-null.
 *
 * # Safety
 * `pool` must be a live handle; `out_ids` must hold `budget` slots and
 * `out_gains` must be null or hold `budget` slots.
 */
AdaselStatus adasel_select_submodular(const AdaselPool *pool,
                                      uintptr_t budget,
                                      double alpha,
                                      double beta,
                                      uint64_t *out_ids,
                                      double *out_gains);

/**
 * Runs one of the samplers; `seed` drives the stochastic ones. The
 * submodular choice uses the stock mixing weights (0.5, 0.3).
 *
 * # Safety
 * `pool` must be a live handle; `out_ids` must hold `budget` slots.
 */
AdaselStatus adasel_select(const AdaselPool *pool,
                           AdaselSampler sampler,
                           uintptr_t budget,
                           uint64_t seed,
                           uint64_t *out_ids);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* ADASEL_H */
