#ifndef ENJOINT_H
#define ENJOINT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EnjointStatus {
  ENJOINT_STATUS_OK = 0,
  ENJOINT_STATUS_NULL_POINTER = 1,
  ENJOINT_STATUS_INVALID_ARGUMENT = 2,
  ENJOINT_STATUS_SHAPE = 3,
  ENJOINT_STATUS_NUMERIC = 4,
  ENJOINT_STATUS_IO = 5,
  ENJOINT_STATUS_FORMAT = 6,
  /**
   * Output buffer too small; the required size is still reported.
   */
  ENJOINT_STATUS_BUFFER_TOO_SMALL = 7,
  ENJOINT_STATUS_PANIC = 8,
} EnjointStatus;

/**
 * Opaque model handle.
 */
typedef struct EnjointModel EnjointModel;

/**
 * One detection in input-pixel coordinates.
 */
typedef struct EnjointDetection {
  float x1;
  float y1;
  float x2;
  float y2;
  uint32_t class_id;
  float confidence;
} EnjointDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *enjoint_version(void);

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *enjoint_last_error(void);

/**
 * Loads a checkpoint file into a new handle stored in `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum EnjointStatus enjoint_model_load(const char *path, struct EnjointModel **out);

/**
 * Creates a randomly initialised model with the default configuration.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum EnjointStatus enjoint_model_init(uint64_t seed, struct EnjointModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void enjoint_model_free(struct EnjointModel *model);

/**
 * Square input side in pixels, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint32_t enjoint_model_input_size(const struct EnjointModel *model);

/**
 * Number of object classes, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint32_t enjoint_model_class_count(const struct EnjointModel *model);

/**
 * Enhances one image into `out` (`3 * width * height` floats).
 *
 * # Safety
 * `pixels` must hold `3 * width * height` floats and `out` `out_len`.
 */
enum EnjointStatus enjoint_enhance(const struct EnjointModel *model,
                                   const float *pixels,
                                   uint32_t width,
                                   uint32_t height,
                                   float *out,
                                   size_t out_len);

/**
 * Detects objects. Writes up to `capacity` detections (highest confidence
 * first) and the total found into `*count`; returns `BufferTooSmall` when
 * they did not all fit.
 *
 * # Safety
 * `pixels` must hold `3 * width * height` floats, `out` `capacity`
 * detections (may be null when `capacity` is 0) and `count` be writable.
 */
enum EnjointStatus enjoint_detect(const struct EnjointModel *model,
                                  const float *pixels,
                                  uint32_t width,
                                  uint32_t height,
                                  float conf_thresh,
                                  float nms_iou,
                                  struct EnjointDetection *out,
                                  size_t capacity,
                                  size_t *count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENJOINT_H */
