#ifndef ANALOG_RETRIEVAL_H
#define ANALOG_RETRIEVAL_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. `AR_OK` is zero; everything else is a failure.
 */
typedef enum ArStatus {
  AR_STATUS_OK = 0,
  AR_STATUS_NULL_ARGUMENT = 1,
  AR_STATUS_INVALID_UTF8 = 2,
  AR_STATUS_PARSE_ERROR = 3,
  AR_STATUS_GRAPH_ERROR = 4,
  AR_STATUS_IO_ERROR = 5,
  AR_STATUS_CHECKPOINT_ERROR = 6,
  AR_STATUS_ENCODE_ERROR = 7,
  AR_STATUS_INDEX_ERROR = 8,
  AR_STATUS_BUFFER_TOO_SMALL = 9,
  AR_STATUS_PANIC = 99,
} ArStatus;

/**
 * Opaque index handle.
 */
typedef struct ArIndex ArIndex;

/**
 * Opaque model handle.
 */
typedef struct ArModel ArModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; do not free.
 */
const char *ar_version(void);

/**
 * Copy of the last error message on this thread, or null if none.
 * Free with [`ar_string_free`].
 */
char *ar_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void ar_string_free(char *s);

/**
 * Parses netlist text and writes its JSON form to `*out_json`.
 *
 * # Safety
 * `netlist` must be a valid nul-terminated string; `out_json` must be writable.
 */
enum ArStatus ar_parse_netlist_json(const char *netlist, char **out_json);

/**
 * Parses netlist text and writes its circuit graph as JSON to `*out_json`.
 *
 * # Safety
 * As for [`ar_parse_netlist_json`].
 */
enum ArStatus ar_graph_json(const char *netlist, char **out_json);

/**
 * Loads a checkpoint. On success `*out` holds a handle to free with
 * [`ar_model_free`].
 *
 * # Safety
 * `path` must be a valid nul-terminated string; `out` must be writable.
 */
enum ArStatus ar_model_load(const char *path, struct ArModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`ar_model_load`], not yet freed.
 */
void ar_model_free(struct ArModel *model);

/**
 * Embedding width of `model`, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ar_model_embed_dim(const struct ArModel *model);

/**
 * Embeds a caption into `out[0..embed_dim]`.
 *
 * # Safety
 * `model` must be live, `caption` nul-terminated and `out` valid for `len` writes.
 */
enum ArStatus ar_encode_text(const struct ArModel *model,
                             const char *caption,
                             double *out,
                             size_t len);

/**
 * Embeds netlist text into `out[0..embed_dim]`.
 *
 * # Safety
 * As for [`ar_encode_text`].
 */
enum ArStatus ar_encode_netlist(const struct ArModel *model,
                                const char *netlist,
                                double *out,
                                size_t len);

/**
 * Embeds an image feature vector of length `n` into `out[0..embed_dim]`.
 *
 * # Safety
 * `features` must be valid for `n` reads and `out` for `len` writes.
 */
enum ArStatus ar_encode_image(const struct ArModel *model,
                              const double *features,
                              size_t n,
                              double *out,
                              size_t len);

/**
 * Loads an index file. On success `*out` holds a handle to free with
 * [`ar_index_free`].
 *
 * # Safety
 * `path` must be nul-terminated; `out` must be writable.
 */
enum ArStatus ar_index_load(const char *path, struct ArIndex **out);

/**
 * # Safety
 * `index` must be null or a handle from [`ar_index_load`], not yet freed.
 */
void ar_index_free(struct ArIndex *index);

/**
 * Number of rows in `index`, or 0 for a null handle.
 *
 * # Safety
 * `index` must be null or a live handle.
 */
size_t ar_index_len(const struct ArIndex *index);

/**
 * Top-`k` search; writes `[{"id": .., "score": ..}, ..]` to `*out_json`.
 *
 * # Safety
 * `index` must be live, `query` valid for `n` reads, `out_json` writable.
 */
enum ArStatus ar_index_query_json(const struct ArIndex *index,
                                  const double *query,
                                  size_t n,
                                  size_t k,
                                  char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANALOG_RETRIEVAL_H */
