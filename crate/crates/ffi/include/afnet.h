#ifndef AFNET_H
#define AFNET_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum AfnetStatus {
  AFNET_STATUS_OK = 0,
  AFNET_STATUS_NULL_POINTER = 1,
  AFNET_STATUS_INVALID_ARGUMENT = 2,
  AFNET_STATUS_IO = 3,
  AFNET_STATUS_FORMAT = 4,
  AFNET_STATUS_GEOMETRY = 5,
  AFNET_STATUS_CONTRACT = 6,
  AFNET_STATUS_PANIC = 7,
} AfnetStatus;

// Opaque model handle.
typedef struct AfnetModel AfnetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call on the same thread.
const char *afnet_last_error(void);

// Build a freshly initialized model. `variant` is one of `DFN`, `mDFN`,
// `MPVN`, `MPVN-M`, `MPVN-R`, `MPVN-RM`; `full_scale` nonzero selects the
// ResNet-50/ResNet-18 encoders and decoder width 512 instead of the tiny ones.
//
// # Safety
// `variant` must be a NUL-terminated string and `out` a writable pointer.
enum AfnetStatus afnet_model_new(const char *variant_tag,
                                 int32_t full_scale,
                                 uint64_t seed,
                                 struct AfnetModel **out);

// Load a model from a checkpoint written by `afnet train`.
//
// # Safety
// String arguments must be NUL-terminated and `out` a writable pointer.
enum AfnetStatus afnet_model_load(const char *variant_tag,
                                  int32_t full_scale,
                                  const char *checkpoint,
                                  struct AfnetModel **out);

// Release a model. Null is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void afnet_model_free(struct AfnetModel *model);

// Number of output classes.
//
// # Safety
// `model` must be a live handle or null (which yields 0).
size_t afnet_model_num_classes(const struct AfnetModel *model);

// Whether the model reads the auxiliary (NDVI, DSM) planes.
//
// # Safety
// `model` must be a live handle or null (which yields 0).
int32_t afnet_model_uses_aux(const struct AfnetModel *model);

// Class probabilities of one normalized tile. `optical` holds 3 planes of
// `height * width` values, `aux` 2 planes (NDVI, DSM) and may be null for
// single-path variants. `probs` receives `num_classes` planes. Both sides
// must be multiples of 32.
//
// # Safety
// Buffers must hold the stated number of `float`s.
enum AfnetStatus afnet_model_predict(const struct AfnetModel *model,
                                     const float *optical,
                                     const float *aux,
                                     size_t width,
                                     size_t height,
                                     float *probs);

// `(nir - red) / (nir + red)` per element, clamped to [-1, 1]; 0 where both are 0.
//
// # Safety
// All three buffers must hold `len` values.
enum AfnetStatus afnet_ndvi(const float *nir, const float *red, size_t len, float *out);

// Confusion counts of `len` predicted and ground-truth labels into
// `counts[gt * k + pred]`, followed by overall accuracy and per-class F1.
// Ground-truth values of 255 are skipped. `f1` may be null.
//
// # Safety
// `pred` and `gt` must hold `len` bytes, `counts` `k * k` values, `f1` `k`.
enum AfnetStatus afnet_confusion(const uint8_t *pred,
                                 const uint8_t *gt,
                                 size_t len,
                                 size_t k,
                                 uint64_t *counts,
                                 double *overall_accuracy,
                                 double *f1);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AFNET_H */
