#ifndef DENSEKIT_H
#define DENSEKIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by fallible calls.
 */
typedef enum DkStatus {
  DK_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  DK_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  DK_STATUS_INVALID_UTF8 = 2,
  DK_STATUS_IO = 3,
  DK_STATUS_PARSE = 4,
  /**
   * Invalid argument or state (see `dk_last_error_message`).
   */
  DK_STATUS_INVALID = 5,
  DK_STATUS_DIMENSION_MISMATCH = 6,
} DkStatus;

/**
 * An immutable passage collection.
 */
typedef struct DkCorpus DkCorpus;

/**
 * A dual-encoder parameter set (query and passage tables).
 */
typedef struct DkEncoder DkEncoder;

/**
 * A ranked search result. Ids are borrowed from the handle and stay valid
 * until it is freed.
 */
typedef struct DkHits DkHits;

/**
 * Frozen passage embeddings for exhaustive top-k search.
 */
typedef struct DkIndex DkIndex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent error on this thread. Valid until the
 * next failing call on the same thread; never null.
 */
const char *dk_last_error_message(void);

/**
 * Crate version as a static string.
 */
const char *dk_version(void);

/**
 * Load a corpus from a TSV (`id<TAB>text`) or JSONL file.
 * `format` is `"tsv"` or `"jsonl"`.
 *
 * # Safety
 * `path` and `format` must be NUL-terminated strings; `out` must be a valid
 * pointer. On success `*out` owns the corpus and must be released with
 * [`dk_corpus_free`].
 */
enum DkStatus dk_corpus_load(const char *path, const char *format, struct DkCorpus **out);

/**
 * Number of passages.
 *
 * # Safety
 * `corpus` must be a live handle from [`dk_corpus_load`].
 */
size_t dk_corpus_len(const struct DkCorpus *corpus);

/**
 * # Safety
 * `corpus` must be a handle from [`dk_corpus_load`] not yet freed; null is
 * ignored.
 */
void dk_corpus_free(struct DkCorpus *corpus);

/**
 * Create a freshly initialized encoder (`hash_buckets x dim` per side).
 *
 * # Safety
 * `out` must be valid; release the handle with [`dk_encoder_free`].
 */
enum DkStatus dk_encoder_init(size_t hash_buckets,
                              size_t dim,
                              uint64_t seed,
                              struct DkEncoder **out);

/**
 * Load encoder parameters from a checkpoint file.
 *
 * # Safety
 * As [`dk_encoder_init`]; `path` must be a NUL-terminated string.
 */
enum DkStatus dk_encoder_load(const char *path, struct DkEncoder **out);

/**
 * Write encoder parameters to a checkpoint file (exact round-trip).
 *
 * # Safety
 * `encoder` must be a live handle; `path` a NUL-terminated string.
 */
enum DkStatus dk_encoder_save(const struct DkEncoder *encoder, const char *path);

/**
 * Embedding dimension of an encoder.
 *
 * # Safety
 * `encoder` must be a live handle.
 */
size_t dk_encoder_dim(const struct DkEncoder *encoder);

/**
 * # Safety
 * `encoder` must be a handle not yet freed; null is ignored.
 */
void dk_encoder_free(struct DkEncoder *encoder);

/**
 * Encode a query text into `out_vec`, which must hold `dk_encoder_dim`
 * doubles.
 *
 * # Safety
 * `encoder` must be live, `text` NUL-terminated, `out_vec` sized to the
 * encoder dimension.
 */
enum DkStatus dk_encode_query(const struct DkEncoder *encoder, const char *text, double *out_vec);

/**
 * Encode a passage text into `out_vec` (see [`dk_encode_query`]).
 *
 * # Safety
 * As [`dk_encode_query`].
 */
enum DkStatus dk_encode_passage(const struct DkEncoder *encoder, const char *text, double *out_vec);

/**
 * Dot-product relevance score of two equal-length vectors.
 *
 * # Safety
 * `a` and `b` must point to `dim` doubles; `out` must be valid.
 */
enum DkStatus dk_score(const double *a, const double *b, size_t dim, double *out);

/**
 * Encode every corpus passage with the encoder's passage side.
 *
 * # Safety
 * `encoder` and `corpus` must be live handles; release `*out` with
 * [`dk_index_free`].
 */
enum DkStatus dk_index_build(const struct DkEncoder *encoder,
                             const struct DkCorpus *corpus,
                             struct DkIndex **out);

/**
 * # Safety
 * `index` must be a handle not yet freed; null is ignored.
 */
void dk_index_free(struct DkIndex *index);

/**
 * Exact top-k passages for a query text by dot product, ties broken by
 * ascending passage id.
 *
 * # Safety
 * All handles must be live; `query_text` NUL-terminated; release `*out`
 * with [`dk_hits_free`].
 */
enum DkStatus dk_index_search(const struct DkIndex *index,
                              const struct DkEncoder *encoder,
                              const char *query_text,
                              size_t k,
                              struct DkHits **out);

/**
 * Number of hits.
 *
 * # Safety
 * `hits` must be a live handle.
 */
size_t dk_hits_len(const struct DkHits *hits);

/**
 * Passage id of hit `i`, or null when out of range. Borrowed from the
 * handle; valid until [`dk_hits_free`].
 *
 * # Safety
 * `hits` must be a live handle.
 */
const char *dk_hits_id(const struct DkHits *hits, size_t i);

/**
 * Score of hit `i`, or NaN when out of range.
 *
 * # Safety
 * `hits` must be a live handle.
 */
double dk_hits_score(const struct DkHits *hits, size_t i);

/**
 * # Safety
 * `hits` must be a handle not yet freed; null is ignored.
 */
void dk_hits_free(struct DkHits *hits);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DENSEKIT_H */
