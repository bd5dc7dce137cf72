#ifndef PROTOMASK_H
#define PROTOMASK_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum PmStatus {
  PM_STATUS_OK = 0,
  PM_STATUS_NULL_POINTER = 1,
  PM_STATUS_INVALID_ARGUMENT = 2,
  PM_STATUS_IO = 3,
  PM_STATUS_FORMAT = 4,
  PM_STATUS_DIMENSION = 5,
  PM_STATUS_NUMERIC = 6,
  PM_STATUS_CONFIG = 7,
  PM_STATUS_VALIDATION = 8,
  PM_STATUS_STATE = 9,
  PM_STATUS_OUT_OF_RANGE = 10,
  PM_STATUS_PANIC = 11,
} PmStatus;

/**
 * Suppression algorithm used by inference.
 */
typedef enum PmNms {
  PM_NMS_FAST = 0,
  PM_NMS_SEQUENTIAL = 1,
} PmNms;

/**
 * Detections of one inference call.
 */
typedef struct PmDetections PmDetections;

/**
 * Model loaded in single precision for inference.
 */
typedef struct PmModel PmModel;

/**
 * Inference options. A negative `score_threshold` keeps the model's own.
 */
typedef struct PmInferOptions {
  double score_threshold;
  bool boxes_only;
  enum PmNms nms;
} PmInferOptions;

/**
 * One detection; box corners are normalised to `[0, 1]`.
 */
typedef struct PmDetection {
  uint32_t class_id;
  double score;
  double x1;
  double y1;
  double x2;
  double y2;
  /**
   * Mask size in pixels; both 0 when masks were not computed.
   */
  uint32_t mask_width;
  uint32_t mask_height;
} PmDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *pm_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pm_version(void);

/**
 * Loads a checkpoint written by the trainer.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PmStatus pm_model_load(const char *path, struct PmModel **out);

/**
 * # Safety
 * `model` must come from [`pm_model_load`] and not be used afterwards.
 */
void pm_model_free(struct PmModel *model);

/**
 * Square input side in pixels, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint32_t pm_model_input_size(const struct PmModel *model);

/**
 * Number of object classes, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint32_t pm_model_num_classes(const struct PmModel *model);

/**
 * Detects objects in an interleaved 8-bit RGB image of the model's input
 * size. `options` may be null for defaults.
 *
 * # Safety
 * `rgb` must point to `len` readable bytes; `model` must be live and
 * `out` valid.
 */
enum PmStatus pm_model_infer(const struct PmModel *model,
                             const uint8_t *rgb,
                             size_t len,
                             const struct PmInferOptions *options,
                             struct PmDetections **out);

/**
 * # Safety
 * `dets` must be null or a live handle.
 */
size_t pm_detections_count(const struct PmDetections *dets);

/**
 * Copies detection `index` (highest score first) into `out`.
 *
 * # Safety
 * `dets` must be live and `out` valid.
 */
enum PmStatus pm_detections_get(const struct PmDetections *dets,
                                size_t index,
                                struct PmDetection *out);

/**
 * Writes detection `index`'s row-major `{0,1}` mask into `buf`, which must
 * hold `mask_width * mask_height` bytes.
 *
 * # Safety
 * `dets` must be live and `buf` writable for `len` bytes.
 */
enum PmStatus pm_detections_mask(const struct PmDetections *dets,
                                 size_t index,
                                 uint8_t *buf,
                                 size_t len);

/**
 * # Safety
 * `dets` must come from [`pm_model_infer`] and not be used afterwards.
 */
void pm_detections_free(struct PmDetections *dets);

/**
 * Fast NMS over `n` raw detections. `boxes` holds `n` corner boxes
 * `(x1, y1, x2, y2)`. Kept input rows are written to `keep` in ascending
 * order and their count to `kept_len`, which is also set when `cap` is too
 * small.
 *
 * # Safety
 * Input arrays must hold `n` entries (`4n` for boxes); `keep` must be
 * writable for `cap` entries.
 */
enum PmStatus pm_fast_nms(const double *boxes,
                          const double *scores,
                          const uint32_t *classes,
                          size_t n,
                          double iou_threshold,
                          size_t top_n,
                          size_t *keep,
                          size_t cap,
                          size_t *kept_len);

/**
 * Greedy NMS with the same conventions as [`pm_fast_nms`].
 *
 * # Safety
 * As for [`pm_fast_nms`].
 */
enum PmStatus pm_sequential_nms(const double *boxes,
                                const double *scores,
                                const uint32_t *classes,
                                size_t n,
                                double iou_threshold,
                                size_t *keep,
                                size_t cap,
                                size_t *kept_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROTOMASK_H */
