#ifndef EDGESCHED_H
#define EDGESCHED_H

#include <stdint.h>
#include <stddef.h>

typedef enum EsStatus {
  ES_STATUS_OK = 0,
  ES_STATUS_NULL_POINTER = 1,
  ES_STATUS_INVALID_UTF8 = 2,
  ES_STATUS_CONFIG = 3,
  ES_STATUS_VALIDATION = 4,
  ES_STATUS_PARSE = 5,
  ES_STATUS_CONTRACT = 6,
  ES_STATUS_INVALID_ACTION = 7,
  ES_STATUS_INCOMPATIBLE = 8,
  ES_STATUS_IO = 9,
  /*
   Every planned frame has already been simulated.
   */
  ES_STATUS_FINISHED = 10,
  ES_STATUS_PANIC = 11,
} EsStatus;

/*
 Opaque simulation handle.
 */
typedef struct EsSimulation EsSimulation;

/*
 Per-frame metrics, field for field the per-frame CSV row.
 */
typedef struct EsFrameMetrics {
  uint64_t frame;
  uint64_t arrived;
  uint64_t completed_edge;
  uint64_t completed_cloud;
  uint64_t dropped;
  double phi_f;
  uint64_t cost_kb;
  double image_mb;
  double util_mean;
  double util_std;
  double reward_mean;
} EsFrameMetrics;

typedef struct EsRunMetrics {
  uint64_t arrived;
  uint64_t completed;
  uint64_t dropped;
  double phi_prime;
  uint64_t cost_kb;
  double image_mb;
  uint64_t frames;
} EsRunMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Creates a simulation of `frames` frames of synthesized arrivals (plus the
 configured drain) with greedy-mode policies and fresh networks.
 `config_toml` may be null for the desk defaults. `seed` replaces the
 configuration's seed.

 # Safety
 `config_toml` must be null or a NUL-terminated string; `out` must be a
 valid pointer to write the handle to.
 */
enum EsStatus es_simulation_new(const char *config_toml,
                                uint64_t seed,
                                uint64_t frames,
                                struct EsSimulation **out);

/*
 Replaces the learned networks with checkpoints from a training run.
 Only allowed before the first frame.

 # Safety
 `sim` must be a live handle and `dir` a NUL-terminated path.
 */
enum EsStatus es_simulation_load_checkpoints(struct EsSimulation *sim, const char *dir);

/*
 Simulates the next frame and writes its metrics to `out` (may be null).
 Returns `ES_STATUS_FINISHED` once every planned frame has run.

 # Safety
 `sim` must be a live handle; `out` null or writable.
 */
enum EsStatus es_simulation_step_frame(struct EsSimulation *sim, struct EsFrameMetrics *out);

/*
 Frames the handle will simulate in total, drain included; 0 for null.

 # Safety
 `sim` must be null or a live handle.
 */
uint64_t es_simulation_total_frames(const struct EsSimulation *sim);

/*
 Totals over the frames simulated so far.

 # Safety
 `sim` must be a live handle and `out` writable.
 */
enum EsStatus es_simulation_run_metrics(const struct EsSimulation *sim, struct EsRunMetrics *out);

/*
 Destroys a handle; null is ignored.

 # Safety
 `sim` must be null or a handle from `es_simulation_new` not yet freed.
 */
void es_simulation_free(struct EsSimulation *sim);

/*
 Length in bytes of the calling thread's last error message, without
 the terminating NUL; 0 if there is none.
 */
size_t es_last_error_length(void);

/*
 Copies the last error message into `buf` (NUL-terminated, truncated to
 `len - 1` bytes) and returns the number of bytes copied, excluding NUL.

 # Safety
 `buf` must be null or point to at least `len` writable bytes.
 */
size_t es_last_error_message(char *buf, size_t len);

/*
 Static, NUL-terminated name of a status code.
 */
const char *es_status_name(enum EsStatus status);

/*
 Library version, NUL-terminated.
 */
const char *es_version(void);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* EDGESCHED_H */
