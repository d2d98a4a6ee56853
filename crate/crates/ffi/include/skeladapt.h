#ifndef SKELADAPT_H
#define SKELADAPT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SkStatus {
  SK_STATUS_OK = 0,
  SK_STATUS_NULL_POINTER = 1,
  SK_STATUS_INVALID_ARGUMENT = 2,
  SK_STATUS_PARSE = 3,
  SK_STATUS_DATA = 4,
  SK_STATUS_IO = 5,
  SK_STATUS_INTERNAL = 6,
  SK_STATUS_PANIC = 7,
} SkStatus;

/**
 * A loaded model together with the encoder settings it was trained with.
 */
typedef struct SkModel SkModel;

/**
 * One skeleton sequence.
 */
typedef struct SkSequence SkSequence;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sk_version(void);

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into the library on this thread.
 */
const char *sk_last_error(void);

/**
 * Parses an NTU `.skeleton` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SkStatus sk_sequence_from_skeleton_file(const char *path, struct SkSequence **out);

/**
 * Builds a sequence from `frames × bodies × joints × 3` coordinates in
 * row-major order.
 *
 * # Safety
 * `xyz` must point to `frames * bodies * joints * 3` doubles and `out`
 * must be a valid pointer.
 */
enum SkStatus sk_sequence_from_coords(const double *xyz,
                                      size_t frames,
                                      size_t bodies,
                                      size_t joints,
                                      struct SkSequence **out);

/**
 * # Safety
 * `seq` must be null or a handle from this library, freed at most once.
 */
void sk_sequence_free(struct SkSequence *seq);

/**
 * # Safety
 * `seq` must be a valid handle and `out` a valid pointer.
 */
enum SkStatus sk_sequence_num_frames(const struct SkSequence *seq, size_t *out);

/**
 * Encodes `seq` into a `3 × out_height × out_width` image, channel-major,
 * written to `out` which must hold `out_len >= 3·out_height·out_width`
 * doubles.
 *
 * # Safety
 * `seq` must be a valid handle and `out` must point to `out_len` doubles.
 */
enum SkStatus sk_encode(const struct SkSequence *seq,
                        size_t out_height,
                        size_t out_width,
                        size_t body_slots,
                        double *out,
                        size_t out_len);

/**
 * Loads a checkpoint written by `skeladapt train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SkStatus sk_model_load(const char *path, struct SkModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library, freed at most once.
 */
void sk_model_free(struct SkModel *model);

/**
 * # Safety
 * `model` must be a valid handle and `out` a valid pointer.
 */
enum SkStatus sk_model_num_classes(const struct SkModel *model, size_t *out);

/**
 * Predicts the action class of `seq`. When `scores` is non-null it
 * receives `K` per-class scores `q_k + q_{K+k}` from the joint softmax;
 * `scores_len` must then be at least `K`.
 *
 * # Safety
 * Handles must be valid, `label` a valid pointer, and `scores` null or
 * pointing to `scores_len` doubles.
 */
enum SkStatus sk_model_predict(const struct SkModel *model,
                               const struct SkSequence *seq,
                               size_t *label,
                               double *scores,
                               size_t scores_len);

/**
 * Adversarial weight `2/(1+exp(−γp)) − 1`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SkStatus sk_alpha(double progress, double gamma, double *out);

/**
 * Annealed learning rate `base_lr / (1 + a·p)^b`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SkStatus sk_learning_rate(double progress, double base_lr, double a, double b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SKELADAPT_H */
