#ifndef FRAMEKG_H
#define FRAMEKG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum FkgStatus {
  FKG_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  FKG_STATUS_NULL_ARGUMENT = 1,
  /*
   A string argument was not valid UTF-8.
   */
  FKG_STATUS_INVALID_UTF8 = 2,
  /*
   The configuration, knowledge base or scenario could not be loaded.
   */
  FKG_STATUS_CONFIG = 3,
  /*
   Query text was rejected.
   */
  FKG_STATUS_QUERY = 4,
  /*
   The engine failed while running.
   */
  FKG_STATUS_ENGINE = 5,
  /*
   The call does not fit the engine's state, such as running twice.
   */
  FKG_STATUS_STATE = 6,
  FKG_STATUS_IO = 7,
  /*
   A Rust panic was caught at the boundary.
   */
  FKG_STATUS_PANIC = 8,
} FkgStatus;

/*
 A loaded engine. Create with [`fkg_engine_new`], release with
 [`fkg_engine_free`].
 */
typedef struct FkgEngine FkgEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *fkg_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *fkg_version(void);

/*
 Loads a TOML engine config and everything it references.

 # Safety
 `config_path` must be a valid NUL-terminated string and `out` a valid
 pointer to write the handle to.
 */
enum FkgStatus fkg_engine_new(const char *config_path, struct FkgEngine **out);

/*
 Runs the scenario to completion on the calling thread.

 # Safety
 `engine` must be a handle from [`fkg_engine_new`].
 */
enum FkgStatus fkg_engine_run(struct FkgEngine *engine);

/*
 Starts the run on a background thread; the query calls stay usable.

 # Safety
 `engine` must be a handle from [`fkg_engine_new`].
 */
enum FkgStatus fkg_engine_start(struct FkgEngine *engine);

/*
 Asks a running engine to stop at the next frame.

 # Safety
 `engine` must be a handle from [`fkg_engine_new`].
 */
enum FkgStatus fkg_engine_stop(struct FkgEngine *engine);

/*
 Blocks until a run started with [`fkg_engine_start`] finishes.

 # Safety
 `engine` must be a handle from [`fkg_engine_new`].
 */
enum FkgStatus fkg_engine_wait(struct FkgEngine *engine);

/*
 Summary of the finished run as JSON.

 # Safety
 `engine` must be a handle from [`fkg_engine_new`]; `out` receives a
 string to release with [`fkg_string_free`].
 */
enum FkgStatus fkg_summary_json(const struct FkgEngine *engine, char **out);

/*
 Registers a query from DSL text and returns it as JSON.

 # Safety
 `engine` must be a handle from [`fkg_engine_new`], `query` a valid
 NUL-terminated string; `out` receives a string to release with
 [`fkg_string_free`].
 */
enum FkgStatus fkg_register_query(const struct FkgEngine *engine, const char *query, char **out);

/*
 Alerts raised from position `since` onwards, as a JSON array.

 # Safety
 As for [`fkg_summary_json`].
 */
enum FkgStatus fkg_alerts_json(const struct FkgEngine *engine, size_t since, char **out);

/*
 Current metrics as JSON.

 # Safety
 As for [`fkg_summary_json`].
 */
enum FkgStatus fkg_metrics_json(const struct FkgEngine *engine, char **out);

/*
 Live knowledge graph as JSON; `window_ms` of 0 returns all of it.

 # Safety
 As for [`fkg_summary_json`].
 */
enum FkgStatus fkg_kg_json(const struct FkgEngine *engine, uint64_t window_ms, char **out);

/*
 Answers an interactive question; returns `{"query": .., "answer": ..}`.

 # Safety
 As for [`fkg_register_query`].
 */
enum FkgStatus fkg_interactive(const struct FkgEngine *engine, const char *question, char **out);

/*
 Runs both configs over a scenario suite and returns the report as JSON.

 # Safety
 All strings must be valid and NUL-terminated; `out` receives a string to
 release with [`fkg_string_free`].
 */
enum FkgStatus fkg_bench(const char *suite_dir,
                         const char *baseline_config,
                         const char *streaming_config,
                         char **out);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must come from this library and not be freed twice.
 */
void fkg_string_free(char *s);

/*
 Stops and releases an engine, waiting for a background run to end.
 Null is ignored.

 # Safety
 `engine` must come from [`fkg_engine_new`] and not be freed twice.
 */
void fkg_engine_free(struct FkgEngine *engine);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRAMEKG_H */
