#ifndef PARTSTAB_H
#define PARTSTAB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum PsStatus {
  PS_STATUS_OK = 0,
  PS_STATUS_NULL_POINTER = 1,
  PS_STATUS_INVALID_ARGUMENT = 2,
  PS_STATUS_CONFIG_ERROR = 3,
  /**
   * The simulation stopped early; the partial trajectory is still returned.
   */
  PS_STATUS_SIMULATION_FAILED = 4,
  PS_STATUS_COMPUTATION_ERROR = 5,
  PS_STATUS_BUFFER_TOO_SMALL = 6,
  PS_STATUS_PANIC = 7,
} PsStatus;

/**
 * A validated scenario.
 */
typedef struct PsScenario PsScenario;

/**
 * A recorded closed-loop trajectory.
 */
typedef struct PsTrajectory PsTrajectory;

typedef struct PsDims {
  /**
   * Task variables `y`.
   */
  size_t n1;
  /**
   * Remaining variables `z`.
   */
  size_t n2;
  /**
   * Controls.
   */
  size_t m;
} PsDims;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or an empty string.
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *ps_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ps_version(void);

/**
 * Parses and validates a TOML configuration.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PsStatus ps_scenario_from_toml(const char *toml, struct PsScenario **out);

/**
 * The built-in AUV helix scenario.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum PsStatus ps_scenario_paper_auv(struct PsScenario **out);

/**
 * # Safety
 * `scenario` must come from this library and not be used afterwards. Null is ignored.
 */
void ps_scenario_free(struct PsScenario *scenario);

/**
 * # Safety
 * `scenario` must be a live handle and `out` writable.
 */
enum PsStatus ps_scenario_dims(const struct PsScenario *scenario, struct PsDims *out);

/**
 * Runs the configured simulation. On [`PsStatus::SimulationFailed`] `*out`
 * still holds the partial trajectory and must be freed.
 *
 * # Safety
 * `scenario` must be a live handle and `out` writable.
 */
enum PsStatus ps_simulate(const struct PsScenario *scenario, struct PsTrajectory **out);

/**
 * # Safety
 * `trajectory` must come from this library and not be used afterwards. Null is ignored.
 */
void ps_trajectory_free(struct PsTrajectory *trajectory);

/**
 * Number of recorded rows.
 *
 * # Safety
 * `trajectory` must be a live handle and `len` writable.
 */
enum PsStatus ps_trajectory_len(const struct PsTrajectory *trajectory, size_t *len);

/**
 * Copies the first `rows` recorded rows. Any output pointer may be null to
 * skip it; otherwise `times` and `errors` need `rows` entries, `states`
 * `rows·n` and `controls` `rows·m`.
 *
 * # Safety
 * Non-null buffers must have the sizes above.
 */
enum PsStatus ps_trajectory_copy(const struct PsTrajectory *trajectory,
                                 size_t rows,
                                 double *times,
                                 double *states,
                                 double *controls,
                                 double *errors);

/**
 * `max(0, ‖y − y*(t)‖ − p)`.
 *
 * # Safety
 * `x` must point to `len` values and `out` be writable.
 */
enum PsStatus ps_tube_distance(const struct PsScenario *scenario,
                               const double *x,
                               size_t len,
                               double t,
                               double *out);

/**
 * Amplitudes `a = −αF(x)⁻¹(y − y*(t))`; `out` needs `n1` entries.
 *
 * # Safety
 * `x` must point to `len` values and `out` to `out_len` writable values.
 */
enum PsStatus ps_amplitude(const struct PsScenario *scenario,
                           const double *x,
                           size_t len,
                           double t,
                           double *out,
                           size_t out_len);

/**
 * Control `u(t)` with the state `x` and reference `y*(t_frozen)` held from
 * the sampling instant `t_frozen`; `out` needs `m` entries.
 *
 * # Safety
 * `x` must point to `len` values and `out` to `out_len` writable values.
 */
enum PsStatus ps_control(const struct PsScenario *scenario,
                         double t,
                         double t_frozen,
                         const double *x,
                         size_t len,
                         double *out,
                         size_t out_len);

/**
 * Runs the `analyze` command and returns the report as JSON. Release the
 * string with [`ps_string_free`].
 *
 * # Safety
 * `scenario` must be a live handle and `out` writable.
 */
enum PsStatus ps_analyze_json(const struct PsScenario *scenario, char **out);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards. Null is ignored.
 */
void ps_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PARTSTAB_H */
