#ifndef HEADPOINT_H
#define HEADPOINT_H

/* Generated by cbindgen from the headpoint-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * `flags` bit for [`hp_parse`]/[`hp_parse_conllu`]: forbid crossing arcs.
 */
#define HP_FLAG_PROJECTIVE 1

/**
 * `flags` bit: allow exactly one attachment to the root.
 */
#define HP_FLAG_SINGLE_ROOT 2

/**
 * Result of every C-ABI call.
 */
typedef enum HpStatus {
  /**
   * Success.
   */
  HP_STATUS_OK = 0,
  /**
   * Invalid argument value or option combination.
   */
  HP_STATUS_USAGE = 1,
  /**
   * Missing or malformed data: files, checkpoints, CoNLL-U text.
   */
  HP_STATUS_DATA = 2,
  /**
   * Non-finite numbers were encountered.
   */
  HP_STATUS_NUMERIC = 3,
  /**
   * A required pointer argument was null.
   */
  HP_STATUS_NULL_ARGUMENT = 4,
  /**
   * A string argument was not valid UTF-8.
   */
  HP_STATUS_INVALID_UTF8 = 5,
  /**
   * The library caught a panic; treat the handle as poisoned.
   */
  HP_STATUS_INTERNAL = 6,
} HpStatus;

/**
 * A loaded parser model. Create with [`hp_model_load`], destroy with
 * [`hp_model_free`].
 */
typedef struct HpModel HpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; never freed by the caller.
 */
const char *hp_version(void);

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next library call on the same thread.
 */
const char *hp_last_error_message(void);

/**
 * Load a checkpoint file into a fresh handle stored in `*out`.
 */
enum HpStatus hp_model_load(const char *path, struct HpModel **out);

/**
 * Destroy a handle returned by [`hp_model_load`]. Null is a no-op.
 */
void hp_model_free(struct HpModel *model);

/**
 * Number of dependency labels the model can predict; 0 for null.
 */
uintptr_t hp_model_label_count(const struct HpModel *model);

/**
 * Name of label `id`, owned by the handle; null when out of range.
 */
const char *hp_model_label_name(const struct HpModel *model, uintptr_t id);

/**
 * Parse one sentence given as `len` word forms plus optional POS tags
 * (`upos` or individual entries may be null, meaning unknown). Writes a
 * head position per word into `heads_out[0..len]` (0 is the root) and,
 * when the buffers are non-null, label ids into `labels_out[0..len]`
 * and the decode log-probability into `*log_prob_out`.
 */
enum HpStatus hp_parse(const struct HpModel *model,
                       const char *const *forms,
                       const char *const *upos,
                       uintptr_t len,
                       uintptr_t beam,
                       uint32_t flags,
                       uintptr_t *heads_out,
                       uintptr_t *labels_out,
                       double *log_prob_out);

/**
 * Parse every sentence of a CoNLL-U document and return the document
 * with predicted heads and labels filled in. `*out` receives a string
 * owned by the caller; release it with [`hp_string_free`].
 */
enum HpStatus hp_parse_conllu(const struct HpModel *model,
                              const char *text,
                              uintptr_t beam,
                              uint32_t flags,
                              char **out);

/**
 * Release a string returned by this library. Null is a no-op.
 */
void hp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HEADPOINT_H */
