#ifndef MANIFOLD_MIX_H
#define MANIFOLD_MIX_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MmStatus {
  MM_STATUS_OK = 0,
  MM_STATUS_NULL_POINTER = 1,
  MM_STATUS_INVALID_ARGUMENT = 2,
  MM_STATUS_CONFIG = 3,
  MM_STATUS_NUMERIC = 4,
  MM_STATUS_IO = 5,
  MM_STATUS_PANIC = 6,
} MmStatus;

/**
 * Points drawn near a manifold, with the configuration that produced them.
 */
typedef struct MmDataset MmDataset;

/**
 * A fitted or loaded mixture density.
 */
typedef struct MmSnapshot MmSnapshot;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *mm_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mm_version(void);

/**
 * Draws the dataset described by a TOML experiment configuration.
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MmStatus mm_dataset_generate(const char *config_toml, uint64_t seed, struct MmDataset **out);

/**
 * # Safety
 * `ds` must be null or a handle from [`mm_dataset_generate`] not yet freed.
 */
void mm_dataset_free(struct MmDataset *ds);

/**
 * Number of points; 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
size_t mm_dataset_len(const struct MmDataset *ds);

/**
 * Ambient dimension; 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
size_t mm_dataset_dim(const struct MmDataset *ds);

/**
 * Copies the points into `out`, which must hold `len × dim` doubles.
 *
 * # Safety
 * `ds` must be a live dataset handle and `out` must point to `capacity`
 * writable doubles.
 */
enum MmStatus mm_dataset_points(const struct MmDataset *ds, double *out, size_t capacity);

/**
 * Generating density of the dataset at `n` points.
 *
 * # Safety
 * `ds` must be a live dataset handle, `x` must hold `n × dim` doubles and
 * `out` `n` writable doubles.
 */
enum MmStatus mm_dataset_true_density(const struct MmDataset *ds,
                                      const double *x,
                                      size_t n,
                                      double *out);

/**
 * Fits the backend named in the dataset's configuration and returns the
 * fitted density: the MAP mixture, or the average of the kept Gibbs draws.
 *
 * # Safety
 * `ds` must be a live dataset handle and `out` a valid pointer.
 */
enum MmStatus mm_fit(const struct MmDataset *ds, struct MmSnapshot **out);

/**
 * Parses a snapshot from its JSON form.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MmStatus mm_snapshot_from_json(const char *json, struct MmSnapshot **out);

/**
 * Serializes a snapshot; release the string with [`mm_string_free`].
 *
 * # Safety
 * `snap` must be a live snapshot handle and `out` a valid pointer.
 */
enum MmStatus mm_snapshot_to_json(const struct MmSnapshot *snap, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void mm_string_free(char *s);

/**
 * # Safety
 * `snap` must be null or a live snapshot handle.
 */
void mm_snapshot_free(struct MmSnapshot *snap);

/**
 * Number of components; 0 for a null handle.
 *
 * # Safety
 * `snap` must be null or a live snapshot handle.
 */
size_t mm_snapshot_len(const struct MmSnapshot *snap);

/**
 * Dimension; 0 for a null handle.
 *
 * # Safety
 * `snap` must be null or a live snapshot handle.
 */
size_t mm_snapshot_dim(const struct MmSnapshot *snap);

/**
 * Log-density at `n` points.
 *
 * # Safety
 * `snap` must be a live snapshot handle, `x` must hold `n × dim` doubles
 * and `out` `n` writable doubles.
 */
enum MmStatus mm_snapshot_log_density(const struct MmSnapshot *snap,
                                      const double *x,
                                      size_t n,
                                      double *out);

/**
 * Contraction rate `ε_n` for the anisotropic smoothness `(β0, β⊥)` of a
 * `d`-dimensional manifold in `R^D`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MmStatus mm_contraction_rate(double beta0,
                                  double beta_perp,
                                  size_t d,
                                  size_t ambient,
                                  size_t n,
                                  double delta,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MANIFOLD_MIX_H */
