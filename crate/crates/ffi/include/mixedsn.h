#ifndef MIXEDSN_H
#define MIXEDSN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define MXSN_PROFILE_IP 0

#define MXSN_PROFILE_PU 1

#define MXSN_PROFILE_SA 2

#define MXSN_PROFILE_BW 3

#define MXSN_PROFILE_CUSTOM 4

typedef enum MxsnStatus {
  MXSN_STATUS_OK = 0,
  MXSN_STATUS_NULL_POINTER = 1,
  MXSN_STATUS_INVALID_ARGUMENT = 2,
  MXSN_STATUS_SHAPE_MISMATCH = 3,
  MXSN_STATUS_NON_FINITE = 4,
  MXSN_STATUS_IO = 5,
  MXSN_STATUS_FORMAT = 6,
  MXSN_STATUS_VALIDATION = 7,
  MXSN_STATUS_UNDEFINED = 8,
  MXSN_STATUS_PANIC = 9,
} MxsnStatus;

/**
 * A cube and its label map.
 */
typedef struct MxsnDataset MxsnDataset;

/**
 * A network with its parameters.
 */
typedef struct MxsnNetwork MxsnNetwork;

typedef struct MxsnMetrics {
  double oa;
  double aa;
  double kappa;
  uint64_t samples;
} MxsnMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *mxsn_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mxsn_version(void);

/**
 * Trainable parameters of the full-width network for a profile.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum MxsnStatus mxsn_paramcount(uint32_t profile,
                                size_t classes,
                                size_t bands,
                                size_t window,
                                size_t *out);

/**
 * Builds a network with Glorot-normal weights drawn from `seed`.
 *
 * # Safety
 * `out` must be valid for writes. The handle is released with
 * [`mxsn_network_free`].
 */
enum MxsnStatus mxsn_network_build(uint32_t profile,
                                   size_t classes,
                                   size_t bands,
                                   size_t window,
                                   uint64_t seed,
                                   struct MxsnNetwork **out);

/**
 * # Safety
 * `handle` must come from this library and not be used afterwards; null is
 * ignored.
 */
void mxsn_network_free(struct MxsnNetwork *handle);

/**
 * Input geometry `[channels, bands, window, window]` and class count.
 *
 * # Safety
 * `handle` must be a live network; `shape` must hold 4 values.
 */
enum MxsnStatus mxsn_network_shape(const struct MxsnNetwork *handle,
                                   size_t *shape,
                                   size_t *classes);

/**
 * # Safety
 * `handle` must be a live network and `out` valid for writes.
 */
enum MxsnStatus mxsn_network_param_count(const struct MxsnNetwork *handle, size_t *out);

/**
 * Eval-mode logits for `batch` patches laid out `[batch, 1, T, S, S]`
 * row-major. `logits` receives `batch · classes` values.
 *
 * # Safety
 * `input` must hold `input_len` floats and `logits` `logits_len` floats.
 */
enum MxsnStatus mxsn_network_forward(const struct MxsnNetwork *handle,
                                     const float *input,
                                     size_t input_len,
                                     size_t batch,
                                     float *logits,
                                     size_t logits_len);

/**
 * # Safety
 * `handle` must be a live network and `path` a NUL-terminated UTF-8 path.
 */
enum MxsnStatus mxsn_checkpoint_save(const struct MxsnNetwork *handle,
                                     const char *path,
                                     uint64_t seed);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 path and `out` valid for writes.
 */
enum MxsnStatus mxsn_checkpoint_load(const char *path, struct MxsnNetwork **out);

/**
 * OA, AA and Kappa of one-based predictions against one-based truth.
 *
 * # Safety
 * `truth` and `predicted` must hold `n` values; `out` valid for writes.
 */
enum MxsnStatus mxsn_metrics(const uint16_t *truth,
                             const uint16_t *predicted,
                             size_t n,
                             size_t classes,
                             struct MxsnMetrics *out);

/**
 * Reads an HSC container. `manifest` may be null, in which case it is
 * derived from the cube path.
 *
 * # Safety
 * Paths must be NUL-terminated UTF-8; `out` valid for writes.
 */
enum MxsnStatus mxsn_hsc_read(const char *manifest,
                              const char *cube,
                              const char *labels,
                              struct MxsnDataset **out);

/**
 * # Safety
 * `handle` must come from this library and not be used afterwards; null is
 * ignored.
 */
void mxsn_dataset_free(struct MxsnDataset *handle);

/**
 * Extents and class count of a dataset.
 *
 * # Safety
 * `handle` must be a live dataset and every out pointer valid for writes.
 */
enum MxsnStatus mxsn_dataset_dims(const struct MxsnDataset *handle,
                                  size_t *height,
                                  size_t *width,
                                  size_t *bands,
                                  size_t *classes);

/**
 * Band-sequential cube values, `bands · height · width` floats owned by
 * the dataset.
 *
 * # Safety
 * `handle` must be a live dataset; the pointer dies with it.
 */
enum MxsnStatus mxsn_dataset_cube(const struct MxsnDataset *handle, const float **values);

/**
 * Row-major labels, `height · width` values owned by the dataset.
 *
 * # Safety
 * `handle` must be a live dataset; the pointer dies with it.
 */
enum MxsnStatus mxsn_dataset_labels(const struct MxsnDataset *handle, const uint16_t **ids);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIXEDSN_H */
