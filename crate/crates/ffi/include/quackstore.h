#ifndef QUACKSTORE_H
#define QUACKSTORE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QsStatus {
  QS_STATUS_OK = 0,
  QS_STATUS_INVALID_ARGUMENT = 1,
  QS_STATUS_IO = 2,
  /**
   * Header or data failed verification.
   */
  QS_STATUS_CORRUPTION = 3,
  /**
   * The device holds no generated table.
   */
  QS_STATUS_NO_DATASET = 4,
  QS_STATUS_DEVICE_FULL = 5,
  /**
   * The device rejected or failed a command.
   */
  QS_STATUS_DEVICE_ERROR = 6,
  /**
   * Too few samples, or a statistic that is undefined for the input.
   */
  QS_STATUS_STATISTICS = 7,
  QS_STATUS_INTERNAL = 8,
} QsStatus;

typedef enum QsStrategy {
  QS_STRATEGY_FILE = 0,
  QS_STRATEGY_SYNC = 1,
  QS_STRATEGY_ASYNC_SINGLE = 2,
  QS_STRATEGY_ASYNC_POOL = 3,
  QS_STRATEGY_ASYNC_THREAD = 4,
} QsStrategy;

/**
 * Opaque device handle.
 */
typedef struct QsDevice QsDevice;

typedef struct QsScanOptions {
  enum QsStrategy strategy;
  /**
   * 0 selects the number of logical cores.
   */
  size_t workers;
  /**
   * 0 selects one queue per worker.
   */
  size_t pool_size;
  size_t queue_depth;
  bool drain_after_block;
  bool passthrough;
  double jitter_us;
  uint64_t seed;
} QsScanOptions;

typedef struct QsScanResult {
  double simulated_us;
  double host_us;
  uint64_t checksum;
  uint64_t blocks;
  size_t tasks;
} QsScanResult;

typedef struct QsTTest {
  double t_statistic;
  size_t degrees_of_freedom;
  double p_value;
  double mean_difference;
} QsTTest;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next call into this library on the same thread.
 */
const char *qs_last_error_message(void);

/**
 * NUL-terminated library version.
 */
const char *qs_version(void);

/**
 * Opens a zero-filled in-memory device of `capacity` bytes with 512-byte
 * LBAs and a 128 KiB transfer limit.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum QsStatus qs_device_open_memory(uint64_t capacity, struct QsDevice **out);

/**
 * Opens the raw image at `path`, creating it with `capacity` bytes when it
 * does not exist. Pass `capacity = 0` to require an existing image.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid handle pointer.
 */
enum QsStatus qs_device_open_file(const char *path, uint64_t capacity, struct QsDevice **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `dev` must be null or a handle from this library that was not yet freed.
 */
void qs_device_free(struct QsDevice *dev);

/**
 * Device capacity in bytes, or 0 for a null handle.
 *
 * # Safety
 * `dev` must be null or a live handle.
 */
uint64_t qs_device_capacity(const struct QsDevice *dev);

/**
 * Writes an empty header, discarding any previous contents' metadata.
 *
 * # Safety
 * `dev` must be a live handle.
 */
enum QsStatus qs_format(const struct QsDevice *dev);

/**
 * Generates the synthetic table on a freshly formatted device and stores its
 * checksum in `checksum` when that is not null.
 *
 * # Safety
 * `dev` must be a live handle; `checksum` null or writable.
 */
enum QsStatus qs_generate(const struct QsDevice *dev,
                          double scale_factor,
                          uint64_t seed,
                          uint64_t *checksum);

/**
 * Default scan options: thread-owned queues, drain on, default depth.
 */
struct QsScanOptions qs_scan_options_default(void);

/**
 * Scans the generated table and verifies its checksum. A mismatch returns
 * [`QsStatus::Corruption`].
 *
 * # Safety
 * `dev` must be a live handle, `options` readable and `result` null or writable.
 */
enum QsStatus qs_scan(const struct QsDevice *dev,
                      const struct QsScanOptions *options,
                      struct QsScanResult *result);

/**
 * One-sided paired t-test of `H0: mean(a - b) <= 0` over `n` pairs.
 *
 * # Safety
 * `a` and `b` must point to `n` readable doubles; `out` must be writable.
 */
enum QsStatus qs_paired_t_test(const double *a, const double *b, size_t n, struct QsTTest *out);

/**
 * Standard error of the mean of `n` samples.
 *
 * # Safety
 * `x` must point to `n` readable doubles; `out` must be writable.
 */
enum QsStatus qs_standard_error(const double *x, size_t n, double *out);

/**
 * One trial of two dependent writes to one block through a pool of two
 * queues. `inverted` is set when the earlier version ended up on disk.
 *
 * # Safety
 * `inverted` must be writable.
 */
enum QsStatus qs_race_demo(double jitter_us, bool drain, uint64_t seed, bool *inverted);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QUACKSTORE_H */
