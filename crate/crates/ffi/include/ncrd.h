#ifndef NCRD_H
#define NCRD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NcrdStatus {
  NCRD_STATUS_OK = 0,
  NCRD_STATUS_NULL_POINTER = 1,
  NCRD_STATUS_INVALID_ARGUMENT = 2,
  // Constraints left nothing to sample.
  NCRD_STATUS_EMPTY_SUPPORT = 3,
  NCRD_STATUS_IO = 4,
  // Unreadable checkpoint or malformed data.
  NCRD_STATUS_FORMAT = 5,
  NCRD_STATUS_BUFFER_TOO_SMALL = 6,
  NCRD_STATUS_PANIC = 7,
} NcrdStatus;

// Opaque engine handle.
typedef struct NcrdEngine NcrdEngine;

// One event. A velocity of 0 ends the note.
typedef struct NcrdEvent {
  // 1..=128 melodic programs, 129..=256 drum kits, 257..=272 anonymous.
  uint16_t instrument;
  uint8_t pitch;
  // Seconds since the previous event, in [0, 10].
  float time;
  float velocity;
} NcrdEvent;

// Query constraints. Start from [`ncrd_query_default`]; negative values
// leave a sub-event free and null lists allow everything.
typedef struct NcrdQuery {
  int32_t fixed_instrument;
  int32_t fixed_pitch;
  float fixed_time;
  float fixed_velocity;
  const uint16_t *instruments;
  size_t instruments_len;
  const uint8_t *pitches;
  size_t pitches_len;
  // Ignored unless `min_time <= max_time`.
  float min_time;
  float max_time;
  // Ignored unless `min_velocity <= max_velocity`.
  float min_velocity;
  float max_velocity;
  // Applied to every sub-event; 0 is greedy.
  float temperature;
  // Only end sounding notes.
  bool end_held;
  // Only start notes that are silent.
  bool start_silent;
} NcrdQuery;

typedef struct NcrdPrediction {
  struct NcrdEvent event;
  // Instrument, pitch, time, velocity.
  double log_probs[4];
  double total;
  // Probability the piece ends before this event.
  double eos_prob;
} NcrdPrediction;

typedef struct NcrdRanked {
  uint8_t pitch;
  double log_prob;
} NcrdRanked;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Load a checkpoint. `seed` drives sampling.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum NcrdStatus ncrd_engine_load(const char *path, uint64_t seed, struct NcrdEngine **out);

// A randomly initialized model of preset `default`, `small` or `micro`.
// Useful for testing and benchmarking.
//
// # Safety
// `preset_name` must be a NUL-terminated string and `out` writable.
enum NcrdStatus ncrd_engine_random(const char *preset_name, uint64_t seed, struct NcrdEngine **out);

// Release a handle. Null is ignored.
//
// # Safety
// `engine` must come from this library and not be used afterwards.
void ncrd_engine_free(struct NcrdEngine *engine);

// Advance the model past an observed event.
//
// # Safety
// Pointers must be valid.
enum NcrdStatus ncrd_feed(struct NcrdEngine *engine, const struct NcrdEvent *event);

// Forget everything fed so far.
//
// # Safety
// `engine` must be valid.
enum NcrdStatus ncrd_reset(struct NcrdEngine *engine);

// Fill `out` with an unconstrained query at temperature 1.
//
// # Safety
// `out` must be writable.
enum NcrdStatus ncrd_query_default(struct NcrdQuery *out);

// Sample the next event. A null `query` means unconstrained. The engine
// state is not changed; feed the result to commit it.
//
// # Safety
// `engine` and `out` must be valid; list pointers in `query` must cover
// their lengths.
enum NcrdStatus ncrd_query(struct NcrdEngine *engine,
                           const struct NcrdQuery *query,
                           struct NcrdPrediction *out);

// Pitches by log-probability, most likely first. At most `capacity`
// entries are written; `written` receives the count. Pass a zero
// capacity to learn the size.
//
// # Safety
// `out` must hold `capacity` entries; `written` must be writable.
enum NcrdStatus ncrd_pitch_ranking(struct NcrdEngine *engine,
                                   const struct NcrdQuery *query,
                                   struct NcrdRanked *out,
                                   size_t capacity,
                                   size_t *written);

// Log-probability of a complete event in instrument, pitch, time,
// velocity order. `log_probs` may be null.
//
// # Safety
// Pointers must be valid; `log_probs` holds 4 doubles when non-null.
enum NcrdStatus ncrd_event_log_prob(struct NcrdEngine *engine,
                                    const struct NcrdEvent *event,
                                    double *log_probs,
                                    double *total);

// Message for the last failed call on this thread, or an empty string.
// Valid until the next call on this thread.
const char *ncrd_last_error(void);

// Library version, static.
const char *ncrd_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NCRD_H */
