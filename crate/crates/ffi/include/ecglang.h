#ifndef ECGLANG_H
#define ECGLANG_H

/* Generated by cbindgen from ecglang-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum EcglangStatus {
  EcglangStatus_Ok = 0,
  EcglangStatus_NullArgument = 1,
  EcglangStatus_InvalidArgument = 2,
  EcglangStatus_BufferTooSmall = 3,
  EcglangStatus_ProcessingFailed = 4,
} EcglangStatus;

/**
 * Pipeline handle: configuration for filtering and delineation.
 */
typedef struct EcglangPipeline EcglangPipeline;

/**
 * Fitted wave vocabulary handle.
 */
typedef struct EcglangVocabulary EcglangVocabulary;

/**
 * One delineated wave segment.
 */
typedef struct EcglangSegment {
  /**
   * 0 = P, 1 = QRS, 2 = T, 3 = background.
   */
  uint32_t wave_type;
  /**
   * Inclusive start sample.
   */
  size_t onset;
  /**
   * Exclusive end sample.
   */
  size_t offset;
} EcglangSegment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent error on this thread, or NULL when the last
 * call succeeded. The pointer stays valid until the next failing call on
 * the same thread; do not free it.
 */
const char *ecglang_last_error(void);

/**
 * Library version as a static string.
 */
const char *ecglang_version(void);

/**
 * Create a pipeline with default configuration.
 */
struct EcglangPipeline *ecglang_pipeline_new_default(void);

/**
 * Create a pipeline from a JSON configuration string (same schema as the
 * CLI's --config file). Returns NULL on parse failure; see
 * `ecglang_last_error`.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string.
 */
struct EcglangPipeline *ecglang_pipeline_from_json(const char *json);

/**
 * Destroy a pipeline handle. NULL is ignored.
 *
 * # Safety
 * `pipeline` must have come from one of the `ecglang_pipeline_*`
 * constructors and not have been freed before.
 */
void ecglang_pipeline_free(struct EcglangPipeline *pipeline);

/**
 * Remove powerline interference and baseline wander from one window of
 * samples (millivolts). `out` must hold `len` values.
 *
 * # Safety
 * `samples` and `out` must point to `len` readable/writable doubles.
 */
enum EcglangStatus ecglang_preprocess(const struct EcglangPipeline *pipeline,
                                      const double *samples,
                                      size_t len,
                                      uint32_t fs,
                                      double *out);

/**
 * Detect R peaks. Writes up to `*out_len` indices and stores the number
 * found in `*out_len`; returns `BufferTooSmall` when the buffer cannot hold
 * them all (the count is still stored).
 *
 * # Safety
 * `samples` must point to `len` doubles; `out_indices` to `*out_len`
 * writable `size_t`s; `out_len` must be non-NULL.
 */
enum EcglangStatus ecglang_detect_r_peaks(const struct EcglangPipeline *pipeline,
                                          const double *samples,
                                          size_t len,
                                          uint32_t fs,
                                          size_t *out_indices,
                                          size_t *out_len);

/**
 * Delineate one window into P/QRS/T/background segments tiling `[0, len)`.
 * Same buffer protocol as `ecglang_detect_r_peaks`.
 *
 * # Safety
 * `samples` must point to `len` doubles; `out_segments` to `*out_len`
 * writable segments; `out_len` must be non-NULL.
 */
enum EcglangStatus ecglang_delineate(const struct EcglangPipeline *pipeline,
                                     const double *samples,
                                     size_t len,
                                     uint32_t fs,
                                     struct EcglangSegment *out_segments,
                                     size_t *out_len);

/**
 * Load a vocabulary from its JSON serialization (fingerprint re-verified).
 * Returns NULL on failure.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string.
 */
struct EcglangVocabulary *ecglang_vocabulary_from_json(const char *json);

/**
 * Destroy a vocabulary handle. NULL is ignored.
 *
 * # Safety
 * `vocab` must have come from `ecglang_vocabulary_from_json` and not have
 * been freed before.
 */
void ecglang_vocabulary_free(struct EcglangVocabulary *vocab);

/**
 * Number of wave tokens (70 with the default cluster map).
 *
 * # Safety
 * `vocab` must be a live vocabulary handle.
 */
size_t ecglang_vocabulary_wave_tokens(const struct EcglangVocabulary *vocab);

/**
 * Copy the vocabulary's SHA-256 fingerprint (hex) into `out` (capacity
 * `out_len` bytes including the NUL).
 *
 * # Safety
 * `vocab` must be live; `out` must point to `out_len` writable bytes.
 */
enum EcglangStatus ecglang_vocabulary_fingerprint(const struct EcglangVocabulary *vocab,
                                                  char *out,
                                                  size_t out_len);

/**
 * Assign a wave to its vocabulary token. `wave_type` uses the
 * `EcglangSegment` codes (0 = P, 1 = QRS, 2 = T, 3 = background); the
 * resulting global token id is stored in `*out_token`.
 *
 * # Safety
 * `wave` must point to `len` doubles; `out_token` must be writable.
 */
enum EcglangStatus ecglang_assign(const struct EcglangVocabulary *vocab,
                                  const double *wave,
                                  size_t len,
                                  uint32_t wave_type,
                                  uint32_t *out_token);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ECGLANG_H */
