#ifndef CLC_H
#define CLC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ClcStatus {
  CLC_STATUS_OK = 0,
  CLC_STATUS_NULL_POINTER = 1,
  CLC_STATUS_INVALID_ARGUMENT = 2,
  CLC_STATUS_IO = 3,
  CLC_STATUS_FORMAT = 4,
  CLC_STATUS_SHAPE = 5,
  CLC_STATUS_NUMERIC = 6,
  /**
   * Average precision is undefined without positive labels.
   */
  CLC_STATUS_NO_POSITIVES = 7,
  CLC_STATUS_BUFFER_TOO_SMALL = 8,
  CLC_STATUS_PANIC = 9,
} ClcStatus;

/**
 * Loaded feature file.
 */
typedef struct ClcDataset ClcDataset;

/**
 * Loaded checkpoint.
 */
typedef struct ClcModelHandle ClcModelHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *clc_version(void);

/**
 * Message of the last failed call on this thread; empty if none. Valid
 * until the next failing call on the same thread.
 */
const char *clc_last_error(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ClcStatus clc_dataset_load(const char *path, struct ClcDataset **out);

/**
 * # Safety
 * `dataset` must come from `clc_dataset_load` and not be used afterwards.
 */
void clc_dataset_free(struct ClcDataset *dataset);

/**
 * # Safety
 * Pointers must be valid.
 */
enum ClcStatus clc_dataset_len(const struct ClcDataset *dataset, uintptr_t *out);

/**
 * Number of shots of video `index`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum ClcStatus clc_dataset_shots(const struct ClcDataset *dataset, uintptr_t index, uintptr_t *out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ClcStatus clc_model_load(const char *path, struct ClcModelHandle **out);

/**
 * # Safety
 * `model` must come from `clc_model_load` and not be used afterwards.
 */
void clc_model_free(struct ClcModelHandle *model);

/**
 * Highlight-class scores of video `index`, written to `out[0..out_len]`;
 * `out_len` must equal the video's shot count.
 *
 * # Safety
 * Pointers must be valid; `out` must hold `out_len` doubles.
 */
enum ClcStatus clc_model_predict(const struct ClcModelHandle *model,
                                 const struct ClcDataset *dataset,
                                 uintptr_t index,
                                 uintptr_t window,
                                 double *out,
                                 uintptr_t out_len);

/**
 * Mean AP over the labelled videos of `dataset` with median half-width `k`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum ClcStatus clc_evaluate(const struct ClcModelHandle *model,
                            const struct ClcDataset *dataset,
                            uintptr_t k,
                            uintptr_t window,
                            double *out_map);

/**
 * # Safety
 * `y` and `out` must each hold `len` doubles.
 */
enum ClcStatus clc_median_filter(const double *y, uintptr_t len, uintptr_t k, double *out);

/**
 * # Safety
 * `scores` and `labels` must each hold `len` entries.
 */
enum ClcStatus clc_average_precision(const double *scores,
                                     const uint8_t *labels,
                                     uintptr_t len,
                                     double *out_ap);

/**
 * Indices of the `ceil(tau * len)` smallest losses in ascending order.
 * `out_indices` must hold `len` entries; the count is written to
 * `out_count`.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum ClcStatus clc_select_clean(const double *losses,
                                uintptr_t len,
                                double tau,
                                uintptr_t *out_indices,
                                uintptr_t *out_count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLC_H */
