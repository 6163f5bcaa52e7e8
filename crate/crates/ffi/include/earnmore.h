#ifndef EARNMORE_H
#define EARNMORE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum EarnmoreStatus {
  EARNMORE_STATUS_OK = 0,
  EARNMORE_STATUS_NULL_POINTER = 1,
  EARNMORE_STATUS_INVALID_UTF8 = 2,
  EARNMORE_STATUS_INVALID_ARGUMENT = 3,
  EARNMORE_STATUS_IO = 4,
  EARNMORE_STATUS_PARSE = 5,
  EARNMORE_STATUS_VALIDATION = 6,
  EARNMORE_STATUS_EMPTY_POOL = 7,
  EARNMORE_STATUS_UNKNOWN_TICKER = 8,
  EARNMORE_STATUS_DEGENERATE_SERIES = 9,
  EARNMORE_STATUS_NON_FINITE = 10,
  EARNMORE_STATUS_VERSION_MISMATCH = 11,
  EARNMORE_STATUS_EXHAUSTED = 12,
  EARNMORE_STATUS_BUFFER_TOO_SMALL = 13,
  EARNMORE_STATUS_PANIC = 14,
} EarnmoreStatus;

// A trained agent loaded from a checkpoint directory.
typedef struct EarnmoreAgent EarnmoreAgent;

// A finished backtest run.
typedef struct EarnmoreBacktest EarnmoreBacktest;

// A loaded dataset.
typedef struct EarnmoreDataset EarnmoreDataset;

// Performance metrics of a value series. SR is NaN for a flat series; CR and
// SoR are +inf when there is no drawdown or no negative return.
typedef struct EarnmoreMetrics {
  double arr;
  double sr;
  double vol;
  double mdd;
  double cr;
  double sor;
} EarnmoreMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `cap - 1` bytes) and returns its full length in bytes. The
// message is empty after a successful call. `buf` may be null to query the length.
//
// # Safety
// `buf` must be null or point to `cap` writable bytes.
size_t earnmore_last_error(char *buf, size_t cap);

// Library version as a static NUL-terminated string.
const char *earnmore_version(void);

// Loads a dataset directory written by `earnmore data build` or `data synth`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum EarnmoreStatus earnmore_dataset_load(const char *path, struct EarnmoreDataset **out);

// Releases a dataset. Null is ignored.
//
// # Safety
// `ds` must come from [`earnmore_dataset_load`] and not be used afterwards.
void earnmore_dataset_free(struct EarnmoreDataset *ds);

// Number of stocks in the dataset universe.
//
// # Safety
// `ds` must be a live dataset handle and `out` a valid pointer.
enum EarnmoreStatus earnmore_dataset_num_stocks(const struct EarnmoreDataset *ds, size_t *out);

// Copies ticker `index` into `buf` like [`earnmore_last_error`] and stores its
// full length in `len`.
//
// # Safety
// `ds` must be a live dataset handle, `buf` null or `cap` writable bytes, `len` valid.
enum EarnmoreStatus earnmore_dataset_ticker(const struct EarnmoreDataset *ds,
                                            size_t index,
                                            char *buf,
                                            size_t cap,
                                            size_t *len);

// Loads a checkpoint directory. With a dataset, a mismatched dataset hash is
// logged as a warning; the call still succeeds.
//
// # Safety
// `path` must be a NUL-terminated string, `ds` null or a live handle, `out` valid.
enum EarnmoreStatus earnmore_checkpoint_load(const char *path,
                                             const struct EarnmoreDataset *ds,
                                             struct EarnmoreAgent **out);

// Releases an agent. Null is ignored.
//
// # Safety
// `agent` must come from [`earnmore_checkpoint_load`] and not be used afterwards.
void earnmore_agent_free(struct EarnmoreAgent *agent);

// Runs the agent over `split` with optional pool events, given as a JSON list
// of `{"date", "add", "remove"}` objects. `temperature` may be null for the
// trained value.
//
// # Safety
// Handles must be live, strings NUL-terminated (`events_json` may be null),
// `temperature` null or valid, `out` valid.
enum EarnmoreStatus earnmore_backtest_run(const struct EarnmoreAgent *agent,
                                          const struct EarnmoreDataset *ds,
                                          const char *split,
                                          const char *events_json,
                                          const double *temperature,
                                          struct EarnmoreBacktest **out);

// Runs a rule-based baseline (`market`, `blsw` or `csm`) like [`earnmore_backtest_run`].
//
// # Safety
// As for [`earnmore_backtest_run`].
enum EarnmoreStatus earnmore_baseline_run(const struct EarnmoreDataset *ds,
                                          const char *name,
                                          const char *split,
                                          const char *events_json,
                                          struct EarnmoreBacktest **out);

// Releases a backtest. Null is ignored.
//
// # Safety
// `bt` must come from a run function and not be used afterwards.
void earnmore_backtest_free(struct EarnmoreBacktest *bt);

// Number of points in the value series (steps + 1).
//
// # Safety
// `bt` must be a live handle and `out` valid.
enum EarnmoreStatus earnmore_backtest_len(const struct EarnmoreBacktest *bt, size_t *out);

// Copies the portfolio value series into `buf`. Fails with `BufferTooSmall`
// (writing nothing) when `cap` is below the series length.
//
// # Safety
// `bt` must be a live handle and `buf` point to `cap` writable doubles.
enum EarnmoreStatus earnmore_backtest_values(const struct EarnmoreBacktest *bt,
                                             double *buf,
                                             size_t cap);

// Metrics of the run's value series.
//
// # Safety
// `bt` must be a live handle and `out` valid.
enum EarnmoreStatus earnmore_backtest_metrics(const struct EarnmoreBacktest *bt,
                                              struct EarnmoreMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EARNMORE_H */
