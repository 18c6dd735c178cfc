#ifndef IFDID_H
#define IFDID_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IfdidStatus {
  IFDID_STATUS_OK = 0,
  /**
   * Null pointer, bad length, out-of-range id or invalid parameter.
   */
  IFDID_STATUS_INVALID_ARGUMENT = 1,
  IFDID_STATUS_IO = 2,
  /**
   * Malformed model file, JSON request or non-UTF-8 string.
   */
  IFDID_STATUS_PARSE = 3,
  /**
   * Probabilities that are not a distribution, or an undefined quantity.
   */
  IFDID_STATUS_NUMERIC = 4,
  IFDID_STATUS_END_OF_STREAM = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  IFDID_STATUS_PANIC = 99,
} IfdidStatus;

/**
 * Opaque n-gram model together with its vocabulary.
 */
typedef struct IfdidModel IfdidModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing why the previous call on this thread failed, or null
 * if it succeeded. The pointer is valid until the next call into the
 * library on the same thread.
 */
const char *ifdid_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ifdid_version(void);

/**
 * Trains an add-k n-gram model on a whitespace-tokenized corpus, one
 * document per line.
 *
 * # Safety
 * `corpus_path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum IfdidStatus ifdid_model_train(const char *corpus_path,
                                   size_t order,
                                   double add_k,
                                   struct IfdidModel **out);

/**
 * Loads a model saved by [`ifdid_model_save`] or the `train-lm` command.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum IfdidStatus ifdid_model_load(const char *path, struct IfdidModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum IfdidStatus ifdid_model_save(const struct IfdidModel *model, const char *path);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void ifdid_model_free(struct IfdidModel *model);

/**
 * # Safety
 * `model` must come from this library and `out` be a valid pointer.
 */
enum IfdidStatus ifdid_model_vocab_size(const struct IfdidModel *model, size_t *out);

/**
 * Id of `token`; unknown tokens fail with `INVALID_ARGUMENT`.
 *
 * # Safety
 * `model` must come from this library, `token` be NUL-terminated and `out`
 * a valid pointer.
 */
enum IfdidStatus ifdid_model_token_id(const struct IfdidModel *model,
                                      const char *token,
                                      size_t *out);

/**
 * Next-token distribution after `context` (token ids, BOS not included).
 * `out` must hold exactly the vocabulary size.
 *
 * # Safety
 * `context` must point to `context_len` ids and `out` to `out_len` doubles.
 */
enum IfdidStatus ifdid_model_next_distribution(const struct IfdidModel *model,
                                               const size_t *context,
                                               size_t context_len,
                                               double *out,
                                               size_t out_len);

/**
 * Shannon entropy in nats.
 *
 * # Safety
 * `probs` must point to `len` doubles and `out` be a valid pointer.
 */
enum IfdidStatus ifdid_entropy(const double *probs, size_t len, double *out);

/**
 * Raises `typical` to the power set by `gamma`, keeps `frozen` entries
 * fixed and moves the difference proportionally onto the remaining tokens.
 *
 * # Safety
 * Pointers must reference arrays of the given lengths; `out` must hold
 * `len` doubles.
 */
enum IfdidStatus ifdid_gamma_transform(const double *probs,
                                       size_t len,
                                       const size_t *typical,
                                       size_t typical_len,
                                       const size_t *frozen,
                                       size_t frozen_len,
                                       double gamma,
                                       double *out);

/**
 * Keeps tokens whose information lies within `epsilon` of the entropy and
 * renormalizes.
 *
 * # Safety
 * `probs` and `out` must each reference `len` doubles.
 */
enum IfdidStatus ifdid_filter(const double *probs, size_t len, double epsilon, double *out);

/**
 * Lifts nonzero entries below `threshold` to it and renormalizes once.
 *
 * # Safety
 * `probs` and `out` must each reference `len` doubles.
 */
enum IfdidStatus ifdid_clamp(const double *probs, size_t len, double threshold, double *out);

/**
 * Decodes one sequence. `request_json` is an object with `strategy`
 * (e.g. `{"kind":"top_k","k":5}`), `max_length` and optionally `seed`,
 * `stream`, `prompt`, `pieces`, `clamp` and `selection`. On success `*out`
 * receives a JSON object with `tokens`, `ids`, `termination` and
 * `per_step`, to be released with [`ifdid_string_free`].
 *
 * # Safety
 * `model` must come from this library, `request_json` be NUL-terminated and
 * `out` a valid pointer.
 */
enum IfdidStatus ifdid_decode(const struct IfdidModel *model, const char *request_json, char **out);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void ifdid_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IFDID_H */
