#ifndef OCSTAB_H
#define OCSTAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result codes of every fallible call.
 */
typedef enum OcstabStatus {
  OCSTAB_STATUS_OK = 0,
  OCSTAB_STATUS_NULL_POINTER = 1,
  OCSTAB_STATUS_INVALID_ARGUMENT = 2,
  OCSTAB_STATUS_CONFIG = 3,
  OCSTAB_STATUS_SOLVER = 4,
  OCSTAB_STATUS_BUFFER_TOO_SMALL = 5,
  OCSTAB_STATUS_PANIC = 6,
} OcstabStatus;

/**
 * A discretized control problem built from a TOML experiment config.
 */
typedef struct OcstabProblem OcstabProblem;

/**
 * Result of `ocstab_solve_control`.
 */
typedef struct OcstabSolution OcstabSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`) and returns the full message length plus one, or 0
 * if there is no error.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t ocstab_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ocstab_version(void);

/**
 * Builds a problem from TOML config text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum OcstabStatus ocstab_problem_from_toml(const char *toml, struct OcstabProblem **out);

/**
 * Builds a problem from a TOML config file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum OcstabStatus ocstab_problem_from_file(const char *path, struct OcstabProblem **out);

/**
 * Releases a problem; null is ignored.
 *
 * # Safety
 * `problem` must come from this library and not be used afterwards.
 */
void ocstab_problem_free(struct OcstabProblem *problem);

/**
 * Number of mesh nodes, the length of every nodal array.
 *
 * # Safety
 * Pointers must be valid or null.
 */
enum OcstabStatus ocstab_problem_node_count(const struct OcstabProblem *problem, size_t *out);

/**
 * Node coordinates as `x1, x2` pairs; `len` must be at least twice the
 * node count.
 *
 * # Safety
 * `xy` must point to `len` writable doubles.
 */
enum OcstabStatus ocstab_problem_nodes(const struct OcstabProblem *problem, double *xy, size_t len);

/**
 * Solves the state equation for the nodal control `u`.
 *
 * # Safety
 * `u` must hold `len` doubles and `y` must have room for `len` doubles;
 * `newton_iters` may be null.
 */
enum OcstabStatus ocstab_solve_state(const struct OcstabProblem *problem,
                                     const double *u,
                                     double *y,
                                     size_t len,
                                     size_t *newton_iters);

/**
 * Objective value and gradient density `phi + g` at an admissible `u`.
 * `gradient` may be null.
 *
 * # Safety
 * `u` must hold `len` doubles, `gradient` (if not null) room for `len`.
 */
enum OcstabStatus ocstab_objective(const struct OcstabProblem *problem,
                                   const double *u,
                                   size_t len,
                                   double *value,
                                   double *gradient);

/**
 * Solves the control problem from random starts drawn with `seed`. A run
 * that does not reach the stationarity tolerance still returns a
 * solution; check `ocstab_solution_converged`.
 *
 * # Safety
 * `out` must be writable.
 */
enum OcstabStatus ocstab_solve_control(const struct OcstabProblem *problem,
                                       uint64_t seed,
                                       struct OcstabSolution **out);

/**
 * Releases a solution; null is ignored.
 *
 * # Safety
 * `solution` must come from this library and not be used afterwards.
 */
void ocstab_solution_free(struct OcstabSolution *solution);

/**
 * Objective value, stationarity residual and convergence flag; any
 * output pointer may be null.
 *
 * # Safety
 * Pointers must be valid or null.
 */
enum OcstabStatus ocstab_solution_summary(const struct OcstabSolution *solution,
                                          double *objective,
                                          double *residual,
                                          bool *converged);

/**
 * Optimal control at the nodes.
 *
 * # Safety
 * `u` must point to `len` writable doubles.
 */
enum OcstabStatus ocstab_solution_control(const struct OcstabSolution *solution,
                                          double *u,
                                          size_t len);

/**
 * Optimal state at the nodes.
 *
 * # Safety
 * `y` must point to `len` writable doubles.
 */
enum OcstabStatus ocstab_solution_state(const struct OcstabSolution *solution,
                                        double *y,
                                        size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OCSTAB_H */
