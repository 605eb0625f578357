#ifndef STX_H
#define STX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StxStatus {
  STX_STATUS_OK = 0,
  STX_STATUS_NULL_ARGUMENT = 1,
  STX_STATUS_INVALID_UTF8 = 2,
  STX_STATUS_IO = 3,
  /**
   * Input data was malformed or unusable.
   */
  STX_STATUS_DATA = 4,
  STX_STATUS_INVALID_CONFIG = 5,
  STX_STATUS_RUNTIME = 6,
  STX_STATUS_BUFFER_TOO_SMALL = 7,
  STX_STATUS_PANIC = 8,
} StxStatus;

/**
 * Opaque classifier handle.
 */
typedef struct StxClassifier StxClassifier;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string.
 */
const char *stx_version(void);

/**
 * Copies the calling thread's last error message. Returns the number of
 * bytes required including the terminator; copies nothing if `len` is
 * smaller than that.
 *
 * # Safety
 * `buf` must be NULL or point to `len` writable bytes.
 */
size_t stx_last_error_message(char *buf, size_t len);

/**
 * Normalizes `text` with the built-in stop lists and suffix stemmer and
 * writes the space-joined tokens.
 *
 * # Safety
 * `text` must be a valid C string; see the module docs for `buf`/`needed`.
 */
enum StxStatus stx_normalize(const char *text_ptr, char *buf, size_t len, size_t *needed);

/**
 * Fits a classifier on a prepared corpus given as JSON-Lines text (one
 * object per line with `id`, `text` and `root_category`).
 * `config_json` holds a pipeline configuration and may be NULL for
 * defaults. `thesaurus_json` holds a hashtag thesaurus file and may be
 * NULL unless hashtag expansion is configured.
 *
 * # Safety
 * String arguments must be valid C strings or NULL where allowed; `out`
 * must be writable. Free the result with [`stx_classifier_free`].
 */
enum StxStatus stx_classifier_train(const char *corpus_jsonl,
                                    const char *config_json,
                                    const char *thesaurus_json,
                                    struct StxClassifier **out);

/**
 * Loads a model directory written by [`stx_classifier_save`] or the `stx
 * train` command. `thesaurus_path` may be NULL.
 *
 * # Safety
 * `dir` must be a valid C string, `thesaurus_path` a valid C string or
 * NULL, and `out` writable.
 */
enum StxStatus stx_classifier_load(const char *dir,
                                   const char *thesaurus_path,
                                   struct StxClassifier **out);

/**
 * # Safety
 * `classifier` must come from this library; `dir` must be a valid C string.
 */
enum StxStatus stx_classifier_save(const struct StxClassifier *classifier, const char *dir);

/**
 * Predicts the category of one raw text.
 *
 * # Safety
 * `classifier` must come from this library and `text` be a valid C
 * string; see the module docs for `buf`/`needed`.
 */
enum StxStatus stx_classifier_predict(const struct StxClassifier *classifier,
                                      const char *text_ptr,
                                      char *buf,
                                      size_t len,
                                      size_t *needed);

/**
 * Number of classes, or 0 for a NULL handle.
 *
 * # Safety
 * `classifier` must be NULL or come from this library.
 */
size_t stx_classifier_class_count(const struct StxClassifier *classifier);

/**
 * # Safety
 * `classifier` must come from this library; see the module docs for
 * `buf`/`needed`.
 */
enum StxStatus stx_classifier_class_name(const struct StxClassifier *classifier,
                                         size_t index,
                                         char *buf,
                                         size_t len,
                                         size_t *needed);

/**
 * # Safety
 * `classifier` must be NULL or a handle from this library not yet freed.
 */
void stx_classifier_free(struct StxClassifier *classifier);

/**
 * Scores predictions against truth (both JSON arrays of strings) and
 * writes the metrics CSV: one row per class, then the category and
 * absolute averages.
 *
 * # Safety
 * Both inputs must be valid C strings; see the module docs for
 * `buf`/`needed`.
 */
enum StxStatus stx_metrics_csv(const char *predictions_json,
                               const char *truth_json,
                               char *buf,
                               size_t len,
                               size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STX_H */
