#ifndef CAPSULE_H
#define CAPSULE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CapsuleMode {
  CAPSULE_MODE_CAPSULE = 0,
  CAPSULE_MODE_BASELINE = 1,
} CapsuleMode;

typedef enum CapsuleStatus {
  CAPSULE_STATUS_OK = 0,
  CAPSULE_STATUS_NULL_POINTER = 1,
  CAPSULE_STATUS_INVALID_ARGUMENT = 2,
  CAPSULE_STATUS_INVALID_SCENARIO = 3,
  CAPSULE_STATUS_CAPACITY_EXCEEDED = 4,
  CAPSULE_STATUS_UNKNOWN_PLAYER = 5,
  CAPSULE_STATUS_ENGINE_DOWN = 6,
  CAPSULE_STATUS_INTERNAL = 7,
} CapsuleStatus;

/**
 * Opaque engine handle.
 */
typedef struct CapsuleEngine CapsuleEngine;

/**
 * One tick's resource sample.
 */
typedef struct CapsuleSample {
  uint64_t tick;
  uint64_t players;
  uint64_t cpu_work;
  uint64_t ram_bytes;
  uint64_t gpu_work;
  uint64_t vram_bytes;
  double tick_model_ms;
} CapsuleSample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates an engine from a scenario document (TOML text).
 *
 * # Safety
 * `scenario_toml` must be a NUL-terminated string; `out` must be writable.
 */
enum CapsuleStatus capsule_engine_new_from_str(const char *scenario_toml,
                                               struct CapsuleEngine **out);

/**
 * Creates an engine from a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CapsuleStatus capsule_engine_new_from_path(const char *path, struct CapsuleEngine **out);

/**
 * Releases an engine. Null is ignored.
 *
 * # Safety
 * `engine` must come from a constructor above and not be used afterwards.
 */
void capsule_engine_free(struct CapsuleEngine *engine);

/**
 * Admits the next player of the scenario. Writes its id to `out_player`.
 *
 * # Safety
 * `engine` must be a live handle; `out_player` must be writable.
 */
enum CapsuleStatus capsule_engine_join(struct CapsuleEngine *engine, uint64_t *out_player);

/**
 * # Safety
 * `engine` must be a live handle.
 */
enum CapsuleStatus capsule_engine_leave(struct CapsuleEngine *engine, uint64_t player);

/**
 * Queues an input for `player`, applied on the next tick.
 *
 * # Safety
 * `engine` must be a live handle, `name` NUL-terminated, and `payload` valid
 * for `len` bytes (it may be null when `len` is 0).
 */
enum CapsuleStatus capsule_engine_input(struct CapsuleEngine *engine,
                                        uint64_t player,
                                        const char *name,
                                        const uint8_t *payload,
                                        size_t len);

/**
 * Runs one tick. `out` may be null.
 *
 * # Safety
 * `engine` must be a live handle; `out`, if not null, must be writable.
 */
enum CapsuleStatus capsule_engine_tick(struct CapsuleEngine *engine, struct CapsuleSample *out);

/**
 * Digest of what `player` observes at the current tick.
 *
 * # Safety
 * `engine` must be a live handle; `out` must be writable.
 */
enum CapsuleStatus capsule_engine_frame_digest(const struct CapsuleEngine *engine,
                                               uint64_t player,
                                               uint64_t *out);

/**
 * Takes the engine down with every session on it. Writes the number of
 * sessions ended to `out_ended` when not null.
 *
 * # Safety
 * `engine` must be a live handle; `reason` NUL-terminated or null.
 */
enum CapsuleStatus capsule_engine_terminate(struct CapsuleEngine *engine,
                                            const char *reason,
                                            size_t *out_ended);

/**
 * # Safety
 * `engine` must be a live handle; `out` must be writable.
 */
enum CapsuleStatus capsule_engine_active_players(const struct CapsuleEngine *engine, size_t *out);

/**
 * Largest player count the scenario's machine hosts in `mode`.
 *
 * # Safety
 * `scenario_toml` must be NUL-terminated; `out` must be writable.
 */
enum CapsuleStatus capsule_capacity_search(const char *scenario_toml,
                                           enum CapsuleMode mode,
                                           uint64_t *out);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length plus one, so a
 * return value above `len` means the buffer was too small.
 *
 * # Safety
 * `buf` must be writable for `len` bytes, or null with `len` 0.
 */
size_t capsule_last_error(char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAPSULE_H */
