#ifndef KURAMOTO_PINN_H
#define KURAMOTO_PINN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KpInitialCondition {
  KP_INITIAL_CONDITION_POLYNOMIAL = 0,
  KP_INITIAL_CONDITION_DIRAC = 1,
  KP_INITIAL_CONDITION_PIECEWISE = 2,
} KpInitialCondition;

typedef enum KpStatus {
  KP_STATUS_OK = 0,
  KP_STATUS_INVALID_INPUT = 2,
  KP_STATUS_NUMERICAL = 3,
  KP_STATUS_FORMAT = 4,
  KP_STATUS_IO = 5,
  KP_STATUS_NULL_POINTER = 6,
  KP_STATUS_PANIC = 7,
} KpStatus;

typedef enum KpActivation {
  KP_ACTIVATION_TANH = 0,
  KP_ACTIVATION_SIN = 1,
  KP_ACTIVATION_RELU = 2,
} KpActivation;

/**
 * A network configuration with its parameters.
 */
typedef struct KpNetwork KpNetwork;

/**
 * A finite-volume reference solution.
 */
typedef struct KpReference KpReference;

/**
 * Problem parameters; start from `kp_problem_default()`.
 */
typedef struct KpProblem {
  double coupling;
  double horizon;
  enum KpInitialCondition initial_condition;
  /**
   * Mollifier half-width of the Dirac initial condition.
   */
  double mollifier;
} KpProblem;

/**
 * Training settings; start from `kp_train_options_default()`.
 */
typedef struct KpTrainOptions {
  size_t epochs;
  size_t n_colloc;
  size_t n_ic;
  size_t n_quad;
  double learning_rate;
  /**
   * Seed of the collocation and initial-condition samples.
   */
  uint64_t seed;
} KpTrainOptions;

/**
 * Loss components after training.
 */
typedef struct KpLoss {
  double residual;
  double initial_condition;
  double total;
} KpLoss;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *kp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *kp_version(void);

struct KpProblem kp_problem_default(void);

struct KpTrainOptions kp_train_options_default(void);

/**
 * Creates a freshly initialized network.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum KpStatus kp_network_new(enum KpActivation activation,
                             size_t depth,
                             size_t width,
                             uint64_t seed,
                             struct KpNetwork **out);

/**
 * Loads a network saved with `kp_network_save` or the command-line tool.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum KpStatus kp_network_load(const char *path, struct KpNetwork **out);

/**
 * # Safety
 * `network` must be a live handle; `path` a NUL-terminated string.
 */
enum KpStatus kp_network_save(const struct KpNetwork *network, const char *path);

/**
 * Number of trainable parameters, or 0 for a NULL handle.
 *
 * # Safety
 * `network` must be NULL or a live handle.
 */
size_t kp_network_param_count(const struct KpNetwork *network);

/**
 * Evaluates `u(theta[i], t[i])` for `i < n` into `out`.
 *
 * # Safety
 * `theta`, `t` and `out` must each point to `n` doubles.
 */
enum KpStatus kp_network_forward(const struct KpNetwork *network,
                                 const double *theta,
                                 const double *t,
                                 size_t n,
                                 double *out);

/**
 * Trains the network in place, starting from its current parameters.
 * `history` may be NULL; otherwise it receives the total loss at the start
 * of each epoch and must hold `options->epochs` doubles. `final_loss` may
 * be NULL.
 *
 * # Safety
 * Pointers must be valid as described above.
 */
enum KpStatus kp_network_train(struct KpNetwork *network,
                               const struct KpProblem *problem,
                               const struct KpTrainOptions *options,
                               double *history,
                               struct KpLoss *final_loss);

/**
 * # Safety
 * `network` must be NULL or a handle not yet freed.
 */
void kp_network_free(struct KpNetwork *network);

/**
 * Solves the reference on `cells` cells with `levels` stored time levels.
 * Zero arguments select the defaults (512 cells, 205 levels, CFL 0.9).
 *
 * # Safety
 * `problem` must be valid; `out` must be writable.
 */
enum KpStatus kp_reference_solve(const struct KpProblem *problem,
                                 size_t cells,
                                 size_t levels,
                                 double cfl,
                                 struct KpReference **out);

/**
 * Loads a reference from a `.bin` or `.csv` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum KpStatus kp_reference_load(const char *path, struct KpReference **out);

/**
 * Saves as CSV when the path ends in `.csv`, binary otherwise.
 *
 * # Safety
 * `reference` must be a live handle; `path` a NUL-terminated string.
 */
enum KpStatus kp_reference_save(const struct KpReference *reference, const char *path);

/**
 * Grid size of the reference.
 *
 * # Safety
 * All pointers must be valid.
 */
enum KpStatus kp_reference_dims(const struct KpReference *reference, size_t *cells, size_t *levels);

/**
 * Copies the cell averages, `out[j * levels + n]` for cell `j` and level
 * `n`; `len` must equal `cells * levels`.
 *
 * # Safety
 * `out` must point to `len` doubles.
 */
enum KpStatus kp_reference_values(const struct KpReference *reference, double *out, size_t len);

/**
 * # Safety
 * `reference` must be NULL or a handle not yet freed.
 */
void kp_reference_free(struct KpReference *reference);

/**
 * RMS difference between the network and the reference over all
 * reference nodes. The reference must have been solved for `problem`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum KpStatus kp_energy_norm(const struct KpNetwork *network,
                             const struct KpProblem *problem,
                             const struct KpReference *reference,
                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KURAMOTO_PINN_H */
