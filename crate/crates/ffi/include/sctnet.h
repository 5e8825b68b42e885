#ifndef SCTNET_H
#define SCTNET_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes.
 */
typedef enum SctnetStatus {
  SCTNET_STATUS_OK = 0,
  SCTNET_STATUS_NULL_POINTER = 1,
  SCTNET_STATUS_INVALID_ARGUMENT = 2,
  SCTNET_STATUS_DIMENSION = 3,
  SCTNET_STATUS_DOMAIN = 4,
  SCTNET_STATUS_CONFIG = 5,
  SCTNET_STATUS_SCHEMA = 6,
  SCTNET_STATUS_FORMAT = 7,
  SCTNET_STATUS_IO = 8,
  SCTNET_STATUS_INTERNAL = 9,
} SctnetStatus;

/*
 A loaded network. Create with [`sctnet_model_load`] or
 [`sctnet_model_init`], release with [`sctnet_model_free`].
 */
typedef struct SctnetModel SctnetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *sctnet_version(void);

/*
 Message for the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *sctnet_last_error(void);

/*
 Loads a checkpoint written by `sctnet train`.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SctnetStatus sctnet_model_load(const char *path, struct SctnetModel **out);

/*
 Creates an untrained model from a preset name (`desk`, `full`, `toy`)
 with seeded weights.

 # Safety
 `preset` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SctnetStatus sctnet_model_init(const char *preset, uint64_t seed, struct SctnetModel **out);

/*
 Releases a model. Null is ignored.

 # Safety
 `model` must come from this library and not be used afterwards.
 */
void sctnet_model_free(struct SctnetModel *model);

/*
 Number of trainable scalars.

 # Safety
 `model` and `out` must be valid pointers.
 */
enum SctnetStatus sctnet_model_parameter_count(const struct SctnetModel *model, uint64_t *out);

/*
 Merges a short/reference/long bracket into a linear HDR image aligned
 to the reference. `exposure_times` holds three strictly increasing
 times; `hdr_out` receives `height * width * 3` values.

 # Safety
 All pointers must be valid for the sizes implied by `height` and
 `width`.
 */
enum SctnetStatus sctnet_merge(const struct SctnetModel *model,
                               const float *short_ldr,
                               const float *reference_ldr,
                               const float *long_ldr,
                               const double *exposure_times,
                               size_t height,
                               size_t width,
                               float *hdr_out);

/*
 Applies the μ-law tone curve element-wise; `input` and `output` may
 alias.

 # Safety
 Both pointers must be valid for `len` values.
 */
enum SctnetStatus sctnet_mu_law(const float *input, size_t len, double mu, float *output);

/*
 PSNR in dB with the given peak; identical images give +infinity.

 # Safety
 `a` and `b` must hold `height * width * 3` values; `out` must be valid.
 */
enum SctnetStatus sctnet_psnr(const float *a,
                              const float *b,
                              size_t height,
                              size_t width,
                              double peak,
                              double *out);

/*
 Mean SSIM over channels with an 11×11 Gaussian window.

 # Safety
 `a` and `b` must hold `height * width * 3` values; `out` must be valid.
 */
enum SctnetStatus sctnet_ssim(const float *a,
                              const float *b,
                              size_t height,
                              size_t width,
                              double *out);

/*
 Reads a PFM file into a newly allocated interleaved buffer. Free it with
 [`sctnet_buffer_free`].

 # Safety
 `path` must be a NUL-terminated string; the out pointers must be valid.
 */
enum SctnetStatus sctnet_read_pfm(const char *path,
                                  float **data_out,
                                  size_t *height_out,
                                  size_t *width_out);

/*
 Frees a buffer from [`sctnet_read_pfm`].

 # Safety
 `data` must come from [`sctnet_read_pfm`] with the same dimensions.
 */
void sctnet_buffer_free(float *data, size_t height, size_t width);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCTNET_H */
