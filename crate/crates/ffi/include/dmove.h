#ifndef DMOVE_H
#define DMOVE_H

#include <stddef.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum DmoveStatus {
  DMOVE_STATUS_OK = 0,
  // A required pointer argument was null.
  DMOVE_STATUS_NULL_POINTER = 1,
  // An argument was out of range or inconsistent.
  DMOVE_STATUS_INVALID_ARGUMENT = 2,
  // The coordination graph is malformed.
  DMOVE_STATUS_INVALID_GRAPH = 3,
  // A factor and local action has no distribution.
  DMOVE_STATUS_MISSING_DATA = 4,
  // The solver or oracle failed.
  DMOVE_STATUS_SOLVE_FAILED = 5,
  // The brute-force oracle refused an instance that is too large.
  DMOVE_STATUS_ORACLE_LIMIT = 6,
  // A file could not be read or written.
  DMOVE_STATUS_IO = 7,
  // A checkpoint named by the manifest is missing.
  DMOVE_STATUS_MISSING_CHECKPOINT = 8,
  // Internal panic; the handle involved should be considered poisoned.
  DMOVE_STATUS_PANIC = 9,
} DmoveStatus;

// Coordination graph with one return distribution per factor and local
// joint action.
typedef struct DmoveProblem DmoveProblem;

// Solver output: ESR-set members with their joint actions, distributions
// and expected returns.
typedef struct DmoveSolution DmoveSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread. The pointer stays valid
// until the next failing call on the same thread.
const char *dmove_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *dmove_version(void);

// Create a problem over `n_agents` agents with `dim` objectives.
//
// Factor `e` has `scope_sizes[e]` agents, listed consecutively in
// `scope_agents` (so `scope_agents` holds the sum of `scope_sizes`).
//
// # Safety
// Array arguments must point to the stated number of elements; `out` must
// be writable.
enum DmoveStatus dmove_problem_new(size_t n_agents,
                                   const size_t *action_counts,
                                   size_t n_factors,
                                   const size_t *scope_sizes,
                                   const size_t *scope_agents,
                                   size_t dim,
                                   struct DmoveProblem **out);

// # Safety
// `problem` must come from [`dmove_problem_new`] and not be used afterwards.
void dmove_problem_free(struct DmoveProblem *problem);

// Number of factors, in the order given to [`dmove_problem_new`].
//
// # Safety
// `problem` must be a live handle or null.
size_t dmove_problem_n_factors(const struct DmoveProblem *problem);

// Set the samples of `factor` under the local joint action `local_actions`
// (one action per scope agent, agents in ascending order). Replaces
// earlier samples.
//
// # Safety
// `local_actions` must hold one entry per agent of the factor's scope and
// `samples` must hold `n_samples * dim` values.
enum DmoveStatus dmove_problem_set_distribution(struct DmoveProblem *problem,
                                                size_t factor,
                                                const size_t *local_actions,
                                                size_t n_samples,
                                                const double *samples);

// Compute the ESR set by variable elimination.
//
// Dominance is decided on the lattice of `n_bins` points per objective
// spanning `[r_min, r_max]`. `cap` bounds the samples kept per cross-sum,
// with 0 meaning no bound. `order` lists every agent once, or is null for
// the default order.
//
// # Safety
// `r_min`/`r_max` must hold `dim` values, `order` (if non-null) one value
// per agent, and `out` must be writable.
enum DmoveStatus dmove_solve(const struct DmoveProblem *problem,
                             const double *r_min,
                             const double *r_max,
                             size_t n_bins,
                             size_t cap,
                             uint64_t seed,
                             const size_t *order,
                             struct DmoveSolution **out);

// ESR set by exhaustive enumeration of joint actions, without sample caps.
// Refuses instances with more than one million joint actions.
//
// # Safety
// As for [`dmove_solve`].
enum DmoveStatus dmove_solve_oracle(const struct DmoveProblem *problem,
                                    const double *r_min,
                                    const double *r_max,
                                    size_t n_bins,
                                    struct DmoveSolution **out);

// Run `dmove solve` on a run-config file: load the trained checkpoints,
// solve, and write the configured exports.
//
// # Safety
// `config_path` must be a NUL-terminated UTF-8 path; `out` must be writable.
enum DmoveStatus dmove_solve_config(const char *config_path, struct DmoveSolution **out);

// # Safety
// `solution` must come from a solve call and not be used afterwards.
void dmove_solution_free(struct DmoveSolution *solution);

// Number of ESR-set members.
//
// # Safety
// `solution` must be a live handle or null.
size_t dmove_solution_len(const struct DmoveSolution *solution);

// Length of each joint action.
//
// # Safety
// `solution` must be a live handle or null.
size_t dmove_solution_n_agents(const struct DmoveSolution *solution);

// Number of objectives.
//
// # Safety
// `solution` must be a live handle or null.
size_t dmove_solution_dim(const struct DmoveSolution *solution);

// Copy the joint action of member `k` into `out` (n_agents values).
//
// # Safety
// `out` must have room for `dmove_solution_n_agents` values.
enum DmoveStatus dmove_solution_joint_action(const struct DmoveSolution *solution,
                                             size_t k,
                                             size_t *out);

// Copy the expected return of member `k` into `out` (dim values).
//
// # Safety
// `out` must have room for `dmove_solution_dim` values.
enum DmoveStatus dmove_solution_expected(const struct DmoveSolution *solution,
                                         size_t k,
                                         double *out);

// Number of samples in the return distribution of member `k`, or 0 when
// `k` is out of range.
//
// # Safety
// `solution` must be a live handle or null.
size_t dmove_solution_n_samples(const struct DmoveSolution *solution, size_t k);

// Copy the samples of member `k` into `out`, row-major.
//
// # Safety
// `out` must have room for `dmove_solution_n_samples * dim` values.
enum DmoveStatus dmove_solution_samples(const struct DmoveSolution *solution,
                                        size_t k,
                                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DMOVE_H */
