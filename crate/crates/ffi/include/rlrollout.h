#ifndef RLROLLOUT_H
#define RLROLLOUT_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

enum RlrStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  RLR_STATUS_OK = 0,
  RLR_STATUS_NULL_POINTER = 1,
  RLR_STATUS_INVALID_UTF8 = 2,
  RLR_STATUS_INVALID_ARGUMENT = 3,
  RLR_STATUS_INVALID_CONFIG = 4,
  RLR_STATUS_SHAPE_MISMATCH = 5,
  /**
   * Difficulty grouping could not be built or does not match the tests.
   */
  RLR_STATUS_GROUPING = 6,
  RLR_STATUS_DEGENERATE_GROUP = 7,
  RLR_STATUS_NUMERICAL = 8,
  RLR_STATUS_DATASET_EXHAUSTED = 9,
  RLR_STATUS_UNREACHABLE = 10,
  RLR_STATUS_IO = 11,
  RLR_STATUS_PANIC = 12,
  RLR_STATUS_INTERNAL = 13,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum RlrStatus RlrStatus;
#else
typedef int32_t RlrStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Scheduling modes, in the order of `Mode::ALL`.
 */
enum RlrMode
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  RLR_MODE_STATIC = 0,
  RLR_MODE_NAIVE_DYNAMIC = 1,
  RLR_MODE_CONTINUOUS = 2,
  RLR_MODE_ASYNC_REWARD = 3,
  RLR_MODE_SEAMLESS = 4,
  RLR_MODE_SEAMLESS_BLOCKING_REWARD = 5,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum RlrMode RlrMode;
#else
typedef int32_t RlrMode;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Tests clustered into difficulty levels, indexed in creation order.
 */
typedef struct RlrGrouping RlrGrouping;

typedef struct RlrSimulator RlrSimulator;

typedef struct RlrObjective {
  double objective;
  double loss;
  double clip_fraction;
  size_t tokens;
} RlrObjective;

/**
 * Metrics of one simulated training step. Times are simulated seconds.
 */
typedef struct RlrStepMetrics {
  RlrMode mode;
  uint64_t seed;
  size_t step;
  size_t num_workers;
  size_t batch_size;
  double phase_time;
  double train_update_time;
  double wall_time;
  double gpu_busy_time;
  double gpu_idle_time;
  double gpu_idle_ratio;
  size_t launched;
  size_t valid_generated;
  size_t filtered;
  size_t aborted;
  size_t zero_gradient_in_batch;
  double sample_waste_ratio;
  double sample_waste_ratio_of_generated;
} RlrStepMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on the calling thread, or null.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *rlr_last_error(void);

const char *rlr_version(void);

/**
 * Writes 1 to `out` when `answer` matches `gold` after normalization.
 */
RlrStatus rlr_math_verify(const char *answer, const char *gold, int32_t *out);

/**
 * Group-relative advantages of `n` rewards, written to `out[0..n]`.
 */
RlrStatus rlr_compute_advantages(const double *rewards, size_t n, double std_guard, double *out);

/**
 * Token-level clipped surrogate. `ratios` holds the responses' per-token
 * probability ratios back to back, `lengths[i]` tokens for response `i`.
 */
RlrStatus rlr_grpo_objective(const double *ratios,
                             const size_t *lengths,
                             const double *advantages,
                             size_t n_responses,
                             double eps_low,
                             double eps_high,
                             struct RlrObjective *out);

/**
 * Clusters `n_tests` tests into `levels` difficulty levels from their
 * pass rates. `quantile` selects equal-count bins instead of equal-width
 * ones.
 */
RlrStatus rlr_grouping_new(const char *problem_id,
                           const char *const *test_ids,
                           const double *pass_rates,
                           size_t n_tests,
                           size_t levels,
                           bool quantile,
                           struct RlrGrouping **out);

void rlr_grouping_free(struct RlrGrouping *grouping);

RlrStatus rlr_grouping_num_levels(const struct RlrGrouping *grouping, size_t *out);

/**
 * Writes the 1-based level of each test, in creation order, to
 * `out[0..n_tests]`.
 */
RlrStatus rlr_grouping_levels(const struct RlrGrouping *grouping, uint32_t *out, size_t n_tests);

/**
 * All-or-nothing credit per level. `passed` is indexed in creation order.
 */
RlrStatus rlr_strict_reward(const struct RlrGrouping *grouping,
                            const bool *passed,
                            size_t n_tests,
                            double *out);

/**
 * Per-test credit within each level. `passed` is indexed in creation order.
 */
RlrStatus rlr_soft_reward(const struct RlrGrouping *grouping,
                          const bool *passed,
                          size_t n_tests,
                          double *out);

/**
 * Creates a simulator from a TOML config; null or empty text uses the
 * defaults.
 */
RlrStatus rlr_simulator_new(const char *config_toml, struct RlrSimulator **out);

void rlr_simulator_free(struct RlrSimulator *sim);

/**
 * Simulates the next training step.
 */
RlrStatus rlr_simulator_run_step(struct RlrSimulator *sim, struct RlrStepMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RLROLLOUT_H */
