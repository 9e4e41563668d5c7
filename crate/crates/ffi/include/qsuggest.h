#ifndef QSUGGEST_H
#define QSUGGEST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every `qs_*` call.
 */
typedef enum QsStatus {
  QS_STATUS_OK = 0,
  QS_STATUS_INVALID_ARGUMENT = 1,
  QS_STATUS_NOT_FOUND = 2,
  QS_STATUS_PROVIDER = 3,
  QS_STATUS_IO = 4,
  QS_STATUS_GENERATION = 5,
  QS_STATUS_INTERNAL = 6,
} QsStatus;

/**
 * Opaque engine handle.
 */
typedef struct QsEngine QsEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Opens an engine from a TOML config file. `store_dir` may be null to use
 * the configured store location.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum QsStatus qs_engine_open(const char *config_path, const char *store_dir, struct QsEngine **out);

/**
 * Releases an engine. Null is ignored.
 *
 * # Safety
 * `engine` must come from [`qs_engine_open`] and not be used afterwards.
 */
void qs_engine_free(struct QsEngine *engine);

/**
 * Labels a trace, learns from it and writes the outcome as JSON to
 * `out_json`. `num_suggestions` of 0 selects the configured default.
 *
 * # Safety
 * `engine` must be a live handle, `trace_json` NUL-terminated, `out_json` writable.
 */
enum QsStatus qs_suggest(const struct QsEngine *engine,
                         const char *trace_json,
                         uint32_t num_suggestions,
                         char **out_json);

/**
 * Labels and stores a trace without suggesting; writes the verdict as JSON.
 *
 * # Safety
 * Same as [`qs_suggest`].
 */
enum QsStatus qs_ingest(const struct QsEngine *engine, const char *trace_json, char **out_json);

/**
 * Cosine similarity of two vectors of length `len`.
 *
 * # Safety
 * `a` and `b` must point to `len` readable doubles; `out` must be writable.
 */
enum QsStatus qs_cosine_similarity(const double *a, const double *b, size_t len, double *out);

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next `qs_*` call on the same thread.
 */
const char *qs_last_error_message(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void qs_string_free(char *s);

/**
 * Library version as a static NUL-terminated string.
 */
const char *qs_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QSUGGEST_H */
