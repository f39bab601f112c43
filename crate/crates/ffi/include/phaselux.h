#ifndef PHASELUX_H
#define PHASELUX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PlxStatus {
  PLX_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  PLX_STATUS_NULL_POINTER = 1,
  /**
   * Invalid configuration, score, kernel or argument value.
   */
  PLX_STATUS_CONFIG = 2,
  /**
   * File could not be read, written or decoded.
   */
  PLX_STATUS_IO = 3,
  /**
   * The optimizer produced a non-finite loss or gradient.
   */
  PLX_STATUS_NONFINITE = 4,
  /**
   * Image dimensions are invalid or do not match.
   */
  PLX_STATUS_SHAPE = 5,
  /**
   * A string argument was not valid UTF-8.
   */
  PLX_STATUS_UTF8 = 6,
  /**
   * An internal error was caught at the boundary.
   */
  PLX_STATUS_PANIC = 7,
  /**
   * Any other failure.
   */
  PLX_STATUS_FAILURE = 8,
} PlxStatus;

/**
 * Opaque run-configuration handle.
 */
typedef struct PlxConfig PlxConfig;

/**
 * Opaque image handle.
 */
typedef struct PlxImage PlxImage;

/**
 * Outcome of [`plx_enhance`].
 */
typedef struct PlxEnhanceSummary {
  double initial_loss;
  double final_loss;
  double final_exposure;
  double final_entropy;
  double final_contrast;
  double final_tv;
  size_t n_v;
  double exposure_offset;
  double strength;
  size_t steps;
} PlxEnhanceSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on the calling thread, or an empty
 * string. The pointer stays valid until the next call into this library on
 * the same thread.
 */
const char *plx_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *plx_version(void);

/**
 * Creates an image from `height * width * channels` interleaved values.
 * `channels` must be 1 or 3 and every value finite.
 */
enum PlxStatus plx_image_new(size_t height,
                             size_t width,
                             size_t channels,
                             const double *data,
                             struct PlxImage **out);

/**
 * Releases an image. Null is ignored.
 */
void plx_image_free(struct PlxImage *img);

enum PlxStatus plx_image_dims(const struct PlxImage *img,
                              size_t *height,
                              size_t *width,
                              size_t *channels);

/**
 * Copies the pixels, interleaved, into `buf`, which must hold exactly
 * `height * width * channels` values.
 */
enum PlxStatus plx_image_copy(const struct PlxImage *img, double *buf, size_t len);

/**
 * Reads an 8-bit PNG, PGM or PPM file.
 */
enum PlxStatus plx_image_load(const char *path, struct PlxImage **out);

/**
 * Writes an image; the format follows the file extension.
 */
enum PlxStatus plx_image_save(const struct PlxImage *img, const char *path);

/**
 * Default configuration.
 */
enum PlxStatus plx_config_default(struct PlxConfig **out);

/**
 * Parses a flat JSON configuration with dotted keys. Unknown keys fail.
 */
enum PlxStatus plx_config_from_json(const char *json, struct PlxConfig **out);

void plx_config_free(struct PlxConfig *cfg);

/**
 * Applies `clamp(gamma * (img * k) + noise, 0, 1)`. `kernel` is `delta`,
 * `gaussian:SIZE:SIGMA` or `motion:LENGTH:ANGLE_DEG`.
 */
enum PlxStatus plx_degrade(const struct PlxImage *img,
                           double gamma,
                           const char *kernel,
                           double noise_sigma,
                           uint64_t seed,
                           struct PlxImage **out);

/**
 * PSNR in dB with peak 1. Identical images give `+inf`.
 */
enum PlxStatus plx_psnr(const struct PlxImage *a, const struct PlxImage *b, double *out);

/**
 * Heuristic visibility and blur scores. `cfg` may be null.
 */
enum PlxStatus plx_proxy_scores(const struct PlxImage *img,
                                const struct PlxConfig *cfg,
                                double *v,
                                double *b);

/**
 * Optimizes the pipeline for one image with visibility `v` and blurriness
 * `b`. `cfg` and `summary` may be null.
 */
enum PlxStatus plx_enhance(const struct PlxImage *img,
                           const struct PlxConfig *cfg,
                           double v,
                           double b,
                           struct PlxImage **out,
                           struct PlxEnhanceSummary *summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHASELUX_H */
