#ifndef PANEL_CONSENSUS_H
#define PANEL_CONSENSUS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of every call.
 */
typedef enum PcStatus {
  PC_STATUS_OK = 0,
  PC_STATUS_NULL_ARGUMENT = 1,
  PC_STATUS_INVALID_UTF8 = 2,
  PC_STATUS_DOMAIN = 3,
  PC_STATUS_NUMERICAL = 4,
  PC_STATUS_SAMPLER = 5,
  PC_STATUS_INFERENCE = 6,
  PC_STATUS_PARSE = 7,
  PC_STATUS_SCHEMA = 8,
  PC_STATUS_IO = 9,
  /**
   * A vote callback reported failure.
   */
  PC_STATUS_CALLBACK = 10,
  PC_STATUS_OUT_OF_RANGE = 11,
  PC_STATUS_PANIC = 12,
} PcStatus;

typedef enum PcPolicy {
  PC_POLICY_BAYES = 0,
  PC_POLICY_INFEXP = 1,
  PC_POLICY_CONFUSION = 2,
  PC_POLICY_RANDOM = 3,
} PcPolicy;

typedef enum PcAggregation {
  PC_AGGREGATION_CONSENSUS = 0,
  /**
   * Positive when any expert votes the positive class.
   */
  PC_AGGREGATION_ANY_POSITIVE = 1,
  /**
   * Positive only when every expert votes the positive class.
   */
  PC_AGGREGATION_UNANIMOUS_POSITIVE = 2,
} PcAggregation;

typedef enum PcPreset {
  PC_PRESET_THREE_CLASS = 0,
  PC_PRESET_LOW_NOISE = 1,
  PC_PRESET_HIGH_NOISE = 2,
} PcPreset;

/**
 * Opaque dataset handle.
 */
typedef struct PcDataset PcDataset;

/**
 * Opaque experiment result handle.
 */
typedef struct PcResult PcResult;

/**
 * Opaque online session handle.
 */
typedef struct PcSession PcSession;

/**
 * Experiment settings. Fill with [`pc_config_default`] and adjust.
 */
typedef struct PcConfig {
  enum PcPolicy policy;
  double threshold;
  uint64_t seed;
  /**
   * Sliding-window size; 0 disables the window.
   */
  size_t window;
  size_t chains;
  size_t warmup;
  size_t draws;
  size_t refit_warmup;
  size_t max_depth;
  enum PcAggregation aggregation;
  /**
   * Positive class for the any/unanimous aggregates.
   */
  size_t positive_class;
} PcConfig;

/**
 * Per-run summary. `first50` and `last50` are NaN for runs under 100 examples.
 */
typedef struct PcSummary {
  size_t examples;
  double error_rate;
  double mean_queries;
  double ece;
  double first50;
  double last50;
} PcSummary;

typedef struct PcRow {
  size_t t;
  size_t prediction;
  size_t truth;
  size_t queries;
  double confidence;
  double est_error;
} PcRow;

/**
 * Asks `expert` for its vote, writing the class to `vote`. Returns 0 on
 * success; anything else aborts the example with `PcStatus::Callback`.
 */
typedef int32_t (*PcAskFn)(void *user_data, size_t expert, size_t *vote);

typedef struct PcOutcome {
  size_t prediction;
  size_t queries;
  double confidence;
  double est_error;
} PcOutcome;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the length the full message needs, NUL included.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t pc_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pc_version(void);

/**
 * Desk-scale defaults for `policy` at `threshold`.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `PcConfig`.
 */
enum PcStatus pc_config_default(enum PcPolicy policy,
                                double threshold,
                                uint64_t seed,
                                struct PcConfig *out);

/**
 * Reads a dataset file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PcStatus pc_dataset_load(const char *path, struct PcDataset **out);

/**
 * Generates a class-wise expertise panel of `examples` records.
 *
 * # Safety
 * `out` must be writable.
 */
enum PcStatus pc_dataset_generate_classwise(enum PcPreset preset,
                                            size_t examples,
                                            uint64_t seed,
                                            struct PcDataset **out);

/**
 * Generates a binary panel of `experts` equicorrelated voters.
 *
 * # Safety
 * `out` must be writable.
 */
enum PcStatus pc_dataset_generate_equicorr(size_t experts,
                                           double rho,
                                           size_t examples,
                                           double classifier_corr,
                                           uint64_t seed,
                                           struct PcDataset **out);

/**
 * Writes a dataset file.
 *
 * # Safety
 * `ds` must come from this library; `path` must be NUL-terminated.
 */
enum PcStatus pc_dataset_save(const struct PcDataset *ds, const char *path);

/**
 * Classes, classifiers, experts and record count. Any output may be null.
 *
 * # Safety
 * `ds` must come from this library; non-null outputs must be writable.
 */
enum PcStatus pc_dataset_shape(const struct PcDataset *ds,
                               size_t *classes,
                               size_t *classifiers,
                               size_t *experts,
                               size_t *len);

/**
 * # Safety
 * `ds` must be null or come from this library, and is invalid afterwards.
 */
void pc_dataset_free(struct PcDataset *ds);

/**
 * Runs one policy online over the dataset.
 *
 * # Safety
 * `ds` must come from this library; `cfg` must be readable; `out` writable.
 */
enum PcStatus pc_run_experiment(const struct PcDataset *ds,
                                const struct PcConfig *cfg,
                                struct PcResult **out);

/**
 * # Safety
 * `res` must come from this library; `out` must be writable.
 */
enum PcStatus pc_result_summary(const struct PcResult *res, struct PcSummary *out);

/**
 * Number of per-example rows.
 *
 * # Safety
 * `res` must come from this library; `out` must be writable.
 */
enum PcStatus pc_result_len(const struct PcResult *res, size_t *out);

/**
 * Row `index` (0-based; `t` inside the row is 1-based).
 *
 * # Safety
 * `res` must come from this library; `out` must be writable.
 */
enum PcStatus pc_result_row(const struct PcResult *res, size_t index, struct PcRow *out);

/**
 * Writes the result in the line-delimited results format.
 *
 * # Safety
 * `res` must come from this library; `path` must be NUL-terminated.
 */
enum PcStatus pc_result_save(const struct PcResult *res, const char *path);

/**
 * # Safety
 * `res` must be null or come from this library, and is invalid afterwards.
 */
void pc_result_free(struct PcResult *res);

/**
 * Starts an online session for panels of `experts` experts and `classifiers`
 * classifiers over `classes` classes. Fits the prior posterior up front.
 *
 * # Safety
 * `cfg` must be readable; `out` writable.
 */
enum PcStatus pc_session_new(size_t classes,
                             size_t classifiers,
                             size_t experts,
                             const struct PcConfig *cfg,
                             struct PcSession **out);

/**
 * Processes one example. `probs` holds `classifiers × classes` probabilities,
 * one classifier after another. `ask` is called for each queried expert.
 *
 * # Safety
 * `session` must come from this library; `probs` must be readable for
 * `probs_len` doubles; `out` must be writable; `ask` must be safe to call
 * with `user_data`.
 */
enum PcStatus pc_session_process(struct PcSession *session,
                                 const double *probs,
                                 size_t probs_len,
                                 PcAskFn ask,
                                 void *user_data,
                                 struct PcOutcome *out);

/**
 * # Safety
 * `session` must be null or come from this library, and is invalid afterwards.
 */
void pc_session_free(struct PcSession *session);

/**
 * Error of the majority of `n_q` random experts (odd) when every panel of
 * `experts` has exactly `n_c` consensus votes and one shared dissent.
 *
 * # Safety
 * `out` must be writable.
 */
enum PcStatus pc_err_random_nq(size_t experts, size_t n_c, size_t n_q, double *out);

/**
 * Random one- or two-expert error for three equicorrelated voters.
 *
 * # Safety
 * `out` must be writable.
 */
enum PcStatus pc_err_equicorrelated_3(double rho, double *out);

/**
 * Expected calibration error; `correct[i]` is nonzero when prediction i was right.
 *
 * # Safety
 * `confidences` and `correct` must be readable for `n` elements (or null when `n` is 0).
 */
enum PcStatus pc_ece(const double *confidences,
                     const uint8_t *correct,
                     size_t n,
                     size_t bins,
                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PANEL_CONSENSUS_H */
