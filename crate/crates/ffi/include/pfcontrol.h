#ifndef PFCONTROL_H
#define PFCONTROL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PfcStatus {
  PFC_STATUS_OK = 0,
  PFC_STATUS_NULL_POINTER = 1,
  // Parse, validation or configuration error.
  PFC_STATUS_INVALID_CONFIG = 2,
  // An array length does not match the problem.
  PFC_STATUS_SHAPE_MISMATCH = 3,
  // Newton, linear or root solve failure.
  PFC_STATUS_SOLVER_FAILURE = 4,
  // A value left the domain of the potential.
  PFC_STATUS_DOMAIN_ERROR = 5,
  // A level index past the end of a trajectory.
  PFC_STATUS_OUT_OF_RANGE = 6,
  // Rust panic caught at the boundary; this is a bug.
  PFC_STATUS_INTERNAL = 7,
} PfcStatus;

// A validated problem: grid, time grid, dynamics, cost, control box and the
// configured initial control.
typedef struct PfcProblem PfcProblem;

// Time levels `0..=steps` of a state solve.
typedef struct PfcTrajectory PfcTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *pfc_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *pfc_version(void);

// Parses and validates a JSON configuration (same schema as the CLI).
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum PfcStatus pfc_problem_from_json(const char *json, struct PfcProblem **out);

// # Safety
// `problem` must come from [`pfc_problem_from_json`] and not be used again.
void pfc_problem_free(struct PfcProblem *problem);

// Number of grid cells and of time steps; controls hold `cells * steps`
// values.
//
// # Safety
// All pointers must be valid.
enum PfcStatus pfc_problem_dims(const struct PfcProblem *problem, size_t *cells, size_t *steps);

// Copies the configured initial control (`control.u0`).
//
// # Safety
// `out` must point to `len` writable doubles.
enum PfcStatus pfc_problem_initial_control(const struct PfcProblem *problem,
                                           double *out,
                                           size_t len);

// Solves the state equation for control `u`.
//
// # Safety
// `u` must point to `len` doubles and `out` must be a valid pointer.
enum PfcStatus pfc_solve_state(const struct PfcProblem *problem,
                               const double *u,
                               size_t len,
                               struct PfcTrajectory **out);

// # Safety
// `trajectory` must come from [`pfc_solve_state`] and not be used again.
void pfc_trajectory_free(struct PfcTrajectory *trajectory);

// Number of stored levels (`steps + 1`), or 0 for a null handle.
//
// # Safety
// `trajectory` must be null or valid.
size_t pfc_trajectory_levels(const struct PfcTrajectory *trajectory);

// Copies the temperature-like variable at `level` (`0..=steps`).
//
// # Safety
// `out` must point to `len` writable doubles.
enum PfcStatus pfc_trajectory_theta(const struct PfcTrajectory *trajectory,
                                    size_t level,
                                    double *out,
                                    size_t len);

// Copies the order parameter at `level` (`0..=steps`).
//
// # Safety
// `out` must point to `len` writable doubles.
enum PfcStatus pfc_trajectory_phi(const struct PfcTrajectory *trajectory,
                                  size_t level,
                                  double *out,
                                  size_t len);

// Reduced cost at `u`, and its gradient when `gradient` is non-null.
//
// # Safety
// `u` and `gradient` (if non-null) must point to `len` doubles.
enum PfcStatus pfc_cost_gradient(const struct PfcProblem *problem,
                                 const double *u,
                                 size_t len,
                                 double *cost,
                                 double *gradient);

// Pointwise projection of `u` onto the control box. `out` may alias `u`.
//
// # Safety
// `u` and `out` must point to `len` doubles.
enum PfcStatus pfc_project_box(const struct PfcProblem *problem,
                               const double *u,
                               double *out,
                               size_t len);

// Runs the projected-gradient optimizer from `u` (the configured optimizer
// settings apply) and overwrites `u` with the final control. `converged`
// receives 1 if the stationarity tolerance was reached, else 0; the
// optional outputs may be null.
//
// # Safety
// `u` must point to `len` writable doubles; other pointers null or valid.
enum PfcStatus pfc_optimize(const struct PfcProblem *problem,
                            double *u,
                            size_t len,
                            double *cost,
                            size_t *iterations,
                            int32_t *converged);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PFCONTROL_H */
