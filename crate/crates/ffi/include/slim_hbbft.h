#ifndef SLIM_HBBFT_H
#define SLIM_HBBFT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of an API call.
 */
typedef enum ShbStatus {
  SHB_STATUS_OK = 0,
  /**
   * The run or trace violated a checked property.
   */
  SHB_STATUS_VIOLATION = 1,
  /**
   * Parameters were rejected.
   */
  SHB_STATUS_INVALID_PARAMS = 2,
  SHB_STATUS_NULL_POINTER = 3,
  /**
   * A string argument was not valid UTF-8.
   */
  SHB_STATUS_INVALID_UTF8 = 4,
  /**
   * A file could not be read or written.
   */
  SHB_STATUS_IO = 5,
  /**
   * A trace file could not be parsed.
   */
  SHB_STATUS_MALFORMED_TRACE = 6,
  /**
   * A caller-provided buffer is too small.
   */
  SHB_STATUS_BUFFER_TOO_SMALL = 7,
  /**
   * A bug: a Rust panic was caught at the boundary.
   */
  SHB_STATUS_INTERNAL = 8,
} ShbStatus;

/**
 * Run configuration under construction.
 */
typedef struct ShbConfig ShbConfig;

/**
 * A finished, checked run.
 */
typedef struct ShbRun ShbRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failed call on this thread, or null. Valid until
 * the next API call on the same thread.
 */
const char *shb_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *shb_version(void);

/**
 * Creates a configuration with `n = 3f + 1` parties and defaults for everything
 * else (committee size `f + 1`, one request per batch, K = 32, honest parties,
 * fair scheduling).
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum ShbStatus shb_config_new(size_t n,
                              size_t f,
                              uint64_t seed,
                              uint32_t epochs,
                              struct ShbConfig **out);

/**
 * Releases a configuration. Null is ignored.
 *
 * # Safety
 * `config` must be null or a handle from [`shb_config_new`] not yet freed.
 */
void shb_config_free(struct ShbConfig *config);

/**
 * Sets the faulty-party profile: `none`, `crash`, `mute`, `equivocate`,
 * `withhold` or `garbage`.
 *
 * # Safety
 * `config` must be a live handle and `name` a NUL-terminated string.
 */
enum ShbStatus shb_config_set_adversary(struct ShbConfig *config, const char *name);

/**
 * Sets the delivery policy: `fair`, `targeted-delay[:PARTY[:KIND|ANY[:AGE]]]` or
 * `send-order[:AGE]`.
 *
 * # Safety
 * `config` must be a live handle and `spec` a NUL-terminated string.
 */
enum ShbStatus shb_config_set_scheduler(struct ShbConfig *config, const char *spec);

/**
 * Sets committee size, requests per batch, security parameter (bytes) and P-PB
 * promotion steps in one call.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum ShbStatus shb_config_set_protocol(struct ShbConfig *config,
                                       size_t kappa,
                                       size_t batch_size,
                                       size_t sec_param,
                                       uint16_t promotion_steps);

/**
 * Simulates and checks the configuration. Returns `SHB_STATUS_VIOLATION` when a
 * property failed or the run hit its liveness cap; the run handle is produced
 * either way so the trace can be inspected.
 *
 * # Safety
 * `config` must be a live handle and `out` valid storage for one handle.
 */
enum ShbStatus shb_run(const struct ShbConfig *config, struct ShbRun **out);

/**
 * Releases a run. Null is ignored.
 *
 * # Safety
 * `run` must be null or a handle from [`shb_run`] not yet freed.
 */
void shb_run_free(struct ShbRun *run);

/**
 * Writes the trace's SHA-256 as 64 lowercase hex digits plus NUL into `buf`,
 * which must hold at least 65 bytes.
 *
 * # Safety
 * `run` must be a live handle and `buf` writable for `len` bytes.
 */
enum ShbStatus shb_run_digest(const struct ShbRun *run, char *buf, size_t len);

/**
 * Total messages and bytes sent during the run (self-sends included).
 *
 * # Safety
 * `run` must be a live handle; `messages` and `bytes` valid or null.
 */
enum ShbStatus shb_run_traffic(const struct ShbRun *run, uint64_t *messages, uint64_t *bytes);

/**
 * Writes the run's trace as line-delimited JSON.
 *
 * # Safety
 * `run` must be a live handle and `path` a NUL-terminated string.
 */
enum ShbStatus shb_run_write_trace(const struct ShbRun *run, const char *path);

/**
 * Reads and checks a trace file.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum ShbStatus shb_check_trace_file(const char *path);

/**
 * Per-epoch bytes of the all-parties-propose baseline, `n^2 v + K n^3 log2 n`.
 */
double shb_baseline_bytes(size_t n, size_t v, size_t k);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLIM_HBBFT_H */
