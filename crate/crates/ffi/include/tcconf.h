#ifndef TCCONF_H
#define TCCONF_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum TcStatus {
  TC_STATUS_OK = 0,
  TC_STATUS_NULL_POINTER = 1,
  TC_STATUS_INVALID_ARGUMENT = 2,
  TC_STATUS_SHAPE = 3,
  TC_STATUS_CONTRACT = 4,
  TC_STATUS_PARSE = 5,
  TC_STATUS_IO = 6,
  TC_STATUS_UNDEFINED = 7,
  TC_STATUS_PANIC = 8,
} TcStatus;

/**
 * Feature matrix with labels and a labeled mask.
 */
typedef struct TcDataset TcDataset;

/**
 * Trained classifier.
 */
typedef struct TcModel TcModel;

/**
 * Metrics of one evaluated set. `fpr95` is NaN when undefined.
 */
typedef struct TcMetrics {
  double accuracy;
  double aurc;
  double e_aurc;
  double ece;
  double nll;
  double brier;
  double fpr95;
} TcMetrics;

/**
 * Bound check result. `rhs` and `min_dc` are +infinity when the bound is vacuous.
 */
typedef struct TcCertificate {
  double lhs;
  double rhs;
  size_t h_c;
  double min_dc;
  double loss_full;
  bool holds;
  bool vacuous;
} TcCertificate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *tc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tc_version(void);

/**
 * Gaussian blobs with every row labeled.
 */
enum TcStatus tc_dataset_blobs(size_t k_classes,
                               size_t n_per_class,
                               size_t dim,
                               double separation,
                               uint64_t seed,
                               struct TcDataset **out_set);

/**
 * Reads a CSV dataset. `n_classes == 0` infers the class count.
 */
enum TcStatus tc_dataset_load_csv(const char *path, size_t n_classes, struct TcDataset **out_set);

enum TcStatus tc_dataset_save_csv(const struct TcDataset *set, const char *path);

/**
 * Builds a dataset from row-major features and labels; a negative label
 * marks the row unlabeled.
 */
enum TcStatus tc_dataset_from_arrays(const double *features,
                                     size_t rows,
                                     size_t cols,
                                     const int64_t *labels,
                                     size_t n_classes,
                                     struct TcDataset **out_set);

size_t tc_dataset_rows(const struct TcDataset *set);

size_t tc_dataset_dim(const struct TcDataset *set);

size_t tc_dataset_labeled_count(const struct TcDataset *set);

/**
 * Stratified split; the train set keeps hidden labels for evaluation.
 */
enum TcStatus tc_dataset_split(const struct TcDataset *set,
                               double labeled_frac,
                               double test_frac,
                               uint64_t seed,
                               struct TcDataset **out_train,
                               struct TcDataset **out_test);

void tc_dataset_free(struct TcDataset *set);

/**
 * Trains on `train`. `config_json` may be null (defaults) or a JSON object
 * with any subset of the training configuration fields.
 */
enum TcStatus tc_train(const struct TcDataset *train,
                       const char *config_json,
                       struct TcModel **out_model);

enum TcStatus tc_model_load(const char *path, struct TcModel **out_model);

enum TcStatus tc_model_save(const struct TcModel *model, const char *path);

size_t tc_model_input_dim(const struct TcModel *model);

size_t tc_model_n_classes(const struct TcModel *model);

/**
 * Softmax outputs for `rows` row-major inputs of the model's input width;
 * writes `rows * n_classes` values into `out_probs`.
 */
enum TcStatus tc_model_predict_proba(const struct TcModel *model,
                                     const double *features,
                                     size_t rows,
                                     double *out_probs);

/**
 * Full metrics report of `model` on every (labeled) row of `set`.
 */
enum TcStatus tc_model_evaluate(const struct TcModel *model,
                                const struct TcDataset *set,
                                size_t n_bins,
                                struct TcMetrics *out_metrics);

void tc_model_free(struct TcModel *model);

/**
 * Metrics from a row-major `rows x n_classes` probability matrix and labels.
 */
enum TcStatus tc_metrics_from_probs(const double *probs,
                                    size_t rows,
                                    size_t n_classes,
                                    const size_t *labels,
                                    size_t n_bins,
                                    struct TcMetrics *out_metrics);

/**
 * AURC and E-AURC of confidence scores against per-sample error flags.
 */
enum TcStatus tc_aurc(const double *kappa,
                      const bool *is_error,
                      size_t n,
                      double *out_aurc,
                      double *out_e_aurc);

/**
 * AUROC and detection error separating in-distribution from OOD scores.
 */
enum TcStatus tc_ood_metrics(const double *in_scores,
                             size_t n_in,
                             const double *out_scores,
                             size_t n_out,
                             double *out_auroc,
                             double *out_detection_error);

/**
 * Training consistency from an `epochs x n` row-major matrix of predicted
 * classes (one row per epoch). Needs at least two epochs.
 */
enum TcStatus tc_consistency(const size_t *predictions,
                             size_t epochs,
                             size_t n,
                             size_t n_classes,
                             double *out_c);

/**
 * Checks the ranking-loss bound on one instance with distinct `kappa`.
 */
enum TcStatus tc_certify_bound(const double *kappa,
                               const double *consistency,
                               const bool *is_error,
                               size_t n,
                               struct TcCertificate *out_cert);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TCCONF_H */
