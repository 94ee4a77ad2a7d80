#ifndef EAR_H
#define EAR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EarStatus {
  EAR_STATUS_OK = 0,
  EAR_STATUS_NULL_POINTER = 1,
  EAR_STATUS_INVALID_ARGUMENT = 2,
  EAR_STATUS_IO = 3,
  EAR_STATUS_FORMAT = 4,
  EAR_STATUS_STATE = 5,
  EAR_STATUS_NUMERIC = 6,
  EAR_STATUS_CAPACITY = 7,
  EAR_STATUS_PANIC = 8,
  EAR_STATUS_OTHER = 9,
} EarStatus;

/**
 * Loaded EARF feature file.
 */
typedef struct EarDataset EarDataset;

/**
 * Loaded domain model.
 */
typedef struct EarModel EarModel;

/**
 * Outcome of classifying one sample.
 */
typedef struct EarInference {
  uint32_t label;
  /**
   * Hamming distance to the nearest prototype.
   */
  uint32_t distance;
  double ood_score;
  bool is_ood;
} EarInference;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *ear_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ear_version(void);

/**
 * Hypervector dimension for `num_classes * num_adaptors` codebook rows.
 *
 * # Safety
 * `out` must point to writable memory for one `size_t`.
 */
enum EarStatus ear_codebook_dimension(size_t num_classes, size_t num_adaptors, size_t *out);

/**
 * Loads an EARM file. On success `*out` owns a handle to release with
 * [`ear_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum EarStatus ear_model_load(const char *path, struct EarModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`ear_model_load`] not yet freed.
 */
void ear_model_free(struct EarModel *model);

/**
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum EarStatus ear_model_dim(const struct EarModel *model, size_t *out);

/**
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum EarStatus ear_model_num_adaptors(const struct EarModel *model, size_t *out);

/**
 * Number of classes the model knows.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum EarStatus ear_model_num_classes(const struct EarModel *model, size_t *out);

/**
 * Classifies one sample given as `n_taps` float arrays, `taps[i]` holding
 * `tap_lens[i]` values. `seed` drives the stochastic binarization.
 *
 * # Safety
 * `taps` and `tap_lens` must point to `n_taps` elements each and every
 * `taps[i]` to `tap_lens[i]` floats; `out` must be writable.
 */
enum EarStatus ear_model_infer(const struct EarModel *model,
                               const float *const *taps,
                               const size_t *tap_lens,
                               size_t n_taps,
                               uint64_t seed,
                               struct EarInference *out);

/**
 * Loads an EARF feature file. Release with [`ear_dataset_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum EarStatus ear_dataset_load(const char *path, struct EarDataset **out);

/**
 * # Safety
 * `ds` must be null or a handle from [`ear_dataset_load`] not yet freed.
 */
void ear_dataset_free(struct EarDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle; `out` must be writable.
 */
enum EarStatus ear_dataset_len(const struct EarDataset *ds, size_t *out);

/**
 * # Safety
 * `ds` must be a live handle; `out` must be writable.
 */
enum EarStatus ear_dataset_tap_count(const struct EarDataset *ds, size_t *out);

/**
 * Label of sample `index`.
 *
 * # Safety
 * `ds` must be a live handle; `out` must be writable.
 */
enum EarStatus ear_dataset_label(const struct EarDataset *ds, size_t index, uint32_t *out);

/**
 * Runs the model over every sample. Writes classification accuracy to
 * `*accuracy` and, when `ood_scores` is non-null, one OOD score per sample.
 *
 * # Safety
 * Handles must be live; `accuracy` must be writable; `ood_scores` must be
 * null or hold `scores_len` doubles, at least the dataset length.
 */
enum EarStatus ear_model_evaluate_dataset(const struct EarModel *model,
                                          const struct EarDataset *ds,
                                          uint64_t seed,
                                          double *accuracy,
                                          double *ood_scores,
                                          size_t scores_len);

/**
 * Area under the ROC curve where larger `scores` should indicate
 * `positive[i] != 0`.
 *
 * # Safety
 * `scores` and `positive` must point to `n` elements; `out` must be writable.
 */
enum EarStatus ear_auroc(const double *scores, const uint8_t *positive, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EAR_H */
