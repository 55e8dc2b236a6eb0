#ifndef EPITRACE_H
#define EPITRACE_H

/* This file is generated by cbindgen from epitrace-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum et_status {
  ET_OK = 0,
  // A required pointer argument was null.
  ET_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  ET_INVALID_UTF8 = 2,
  // Invalid arguments or configuration.
  ET_USAGE = 3,
  // Malformed or inconsistent input data.
  ET_DATA = 4,
  // I/O or internal failure.
  ET_RUNTIME = 5,
  // An output buffer was too small; the required size was reported.
  ET_BUFFER_TOO_SMALL = 6,
  // An index was out of range.
  ET_INDEX_OUT_OF_RANGE = 7,
} et_status;

// Per-user time-allocation profiles (opaque).
typedef struct EtProfileSet EtProfileSet;

// Parsed mobility traces (opaque).
typedef struct EtTraceSet EtTraceSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread. Never null;
// empty when no failure occurred. Valid until the next call on this thread.
const char *et_last_error_message(void);

// Parses a trace CSV file into a new trace set. On success writes a handle
// the caller must free with [`et_trace_set_free`].
//
// # Safety
// `path` must point to a NUL-terminated string and `out` to a writable
// pointer slot; both stay valid for the duration of the call.
enum et_status et_trace_set_parse_file(const char *path, bool strict, struct EtTraceSet **out);

// Frees a trace set; a null handle is a no-op.
//
// # Safety
// `set` must be null or a pointer returned by [`et_trace_set_parse_file`]
// that has not been freed yet.
void et_trace_set_free(struct EtTraceSet *set);

// # Safety
// `set` must be a live trace-set handle.
size_t et_trace_set_user_count(const struct EtTraceSet *set);

// # Safety
// `set` must be a live trace-set handle.
size_t et_trace_set_region_count(const struct EtTraceSet *set);

// # Safety
// `set` must be a live trace-set handle.
uint64_t et_trace_set_event_count(const struct EtTraceSet *set);

// Copies the NUL-terminated identifier of user `index` (registry order)
// into `buf`. `len` (optional) receives the required size including the
// terminator, also on `ET_BUFFER_TOO_SMALL`.
//
// # Safety
// `set` must be a live handle; `buf` must point to `cap` writable bytes;
// `len` must be null or writable.
enum et_status et_trace_set_user_id(const struct EtTraceSet *set,
                                    size_t index,
                                    char *buf,
                                    size_t cap,
                                    size_t *len);

// Copies the NUL-terminated identifier of region `index` (registry order);
// same contract as [`et_trace_set_user_id`].
//
// # Safety
// As for [`et_trace_set_user_id`].
enum et_status et_trace_set_region_id(const struct EtTraceSet *set,
                                      size_t index,
                                      char *buf,
                                      size_t cap,
                                      size_t *len);

// Learns time-allocation profiles over the learning window
// `[start_unix, end_unix)` (UTC seconds). Users without usable events carry
// no profile (see [`et_profile_set_has`]). The caller frees the handle with
// [`et_profile_set_free`].
//
// # Safety
// `set` must be a live handle and `out` a writable pointer slot.
enum et_status et_profiles_build(const struct EtTraceSet *set,
                                 int64_t start_unix,
                                 int64_t end_unix,
                                 struct EtProfileSet **out);

// Frees a profile set; a null handle is a no-op.
//
// # Safety
// `profiles` must be null or a live handle from [`et_profiles_build`].
void et_profile_set_free(struct EtProfileSet *profiles);

// # Safety
// `profiles` must be a live profile-set handle.
size_t et_profile_set_user_count(const struct EtProfileSet *profiles);

// True when user `index` carries a profile.
//
// # Safety
// `profiles` must be a live profile-set handle.
bool et_profile_set_has(const struct EtProfileSet *profiles, size_t index);

// Copies user `index`'s time-allocation vector (one entry per region in
// registry order) into `out`.
//
// # Safety
// `profiles` must be a live handle and `out` must point to `cap` writable
// doubles.
enum et_status et_profile_set_allocation(const struct EtProfileSet *profiles,
                                         size_t index,
                                         double *out,
                                         size_t cap);

// Contagion risk of user `index` against per-region infected/susceptible
// fractions (registry order, `i + s <= 1` per region).
//
// # Safety
// `profiles` must be a live handle; `infected` and `susceptible` must point
// to `n_regions` readable doubles; `out` must be writable.
enum et_status et_risk_score(const struct EtProfileSet *profiles,
                             size_t index,
                             const double *infected,
                             const double *susceptible,
                             size_t n_regions,
                             double *out);

// Ranks every profiled user by descending risk (ties by user index).
// Writes up to `cap` entries into `out_users`/`out_scores`; `out_len`
// receives the full ranking length. Returns `ET_BUFFER_TOO_SMALL` without
// writing entries when `cap` is insufficient.
//
// # Safety
// `profiles` must be a live handle; array arguments must match their
// declared capacities; `out_len` must be writable.
enum et_status et_rank(const struct EtProfileSet *profiles,
                       const double *infected,
                       const double *susceptible,
                       size_t n_regions,
                       uint32_t *out_users,
                       double *out_scores,
                       size_t cap,
                       size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EPITRACE_H */
