#ifndef OBTREE_H
#define OBTREE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ObtStatus {
  OBT_STATUS_OK = 0,
  OBT_STATUS_INVALID_ARGUMENT = 1,
  OBT_STATUS_NULL_POINTER = 2,
  OBT_STATUS_IO = 3,
  OBT_STATUS_PARSE = 4,
  OBT_STATUS_INVALID_MODEL = 5,
  OBT_STATUS_DIMENSION_MISMATCH = 6,
  OBT_STATUS_BUFFER_TOO_SMALL = 7,
  OBT_STATUS_PANIC = 8,
} ObtStatus;

// Opaque model handle.
typedef struct ObtModel ObtModel;

// `lanes` is 0 for the scalar backend or one of 4, 8, 16, 32.
typedef struct ObtPredictOptions {
  uint32_t lanes;
  uint32_t workers;
  uint32_t block_size;
} ObtPredictOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Defaults: scalar backend, one worker, block size 128.
struct ObtPredictOptions obt_predict_options_default(void);

// Loads a JSON model. On success `*out` receives a new handle.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum ObtStatus obt_model_load(const char *path, struct ObtModel **out);

// Builds a seeded synthetic model. On success `*out` receives a new handle.
//
// # Safety
// `out` must be a writable pointer.
enum ObtStatus obt_model_generate(uint64_t seed,
                                  size_t n_features,
                                  size_t n_trees,
                                  size_t depth,
                                  size_t n_dims,
                                  size_t borders_per_feature,
                                  struct ObtModel **out);

// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum ObtStatus obt_model_save(const struct ObtModel *model, const char *path);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void obt_model_free(struct ObtModel *model);

// Feature columns the model expects per sample; 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t obt_model_n_features(const struct ObtModel *model);

// Outputs per sample; 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t obt_model_n_dims(const struct ObtModel *model);

// # Safety
// `model` must be null or a live handle.
size_t obt_model_n_trees(const struct ObtModel *model);

// Raw scores for `n_samples` sample-major rows of `n_features` floats.
// Writes `n_samples * n_dims` doubles to `out`, which holds `out_len`.
// A null `options` means the defaults.
//
// # Safety
// `values` must hold `n_samples * n_features` floats and `out` must have
// room for `out_len` doubles.
enum ObtStatus obt_predict(const struct ObtModel *model,
                           const float *values,
                           size_t n_samples,
                           const struct ObtPredictOptions *options,
                           double *out,
                           size_t out_len);

// Squared Euclidean distance of two `len`-float vectors.
//
// # Safety
// `a` and `b` must hold `len` floats; `out` must be writable.
enum ObtStatus obt_l2_sqr(const float *a, const float *b, size_t len, uint32_t lanes, float *out);

// The calling thread's most recent error, or null if none occurred.
const char *obt_last_error_message(void);

const char *obt_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OBTREE_H */
