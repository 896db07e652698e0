#ifndef FEDQUAD_H
#define FEDQUAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FqStatus {
  FQ_STATUS_OK = 0,
  FQ_STATUS_NULL_POINTER = 1,
  FQ_STATUS_INVALID_ARGUMENT = 2,
  FQ_STATUS_CONFIG = 3,
  FQ_STATUS_DIMENSION = 4,
  FQ_STATUS_IO = 5,
  FQ_STATUS_UNSATISFIABLE = 6,
  FQ_STATUS_PARTITION = 7,
  FQ_STATUS_PROTOCOL = 8,
  FQ_STATUS_NUMERIC = 9,
  FQ_STATUS_BUFFER_TOO_SMALL = 10,
  FQ_STATUS_PANIC = 11,
} FqStatus;

/**
 * Opaque dataset handle.
 */
typedef struct FqDataset FqDataset;

/**
 * Opaque model parameters.
 */
typedef struct FqModel FqModel;

/**
 * Opaque set of client partitions.
 */
typedef struct FqPartitions FqPartitions;

/**
 * Opaque completed experiment.
 */
typedef struct FqRun FqRun;

/**
 * One round of a completed run. `num_participants` counts the clients whose
 * update entered the aggregate.
 */
typedef struct FqRoundReport {
  size_t round;
  size_t num_participants;
  size_t num_skipped;
  double ce_loss;
  double metric_loss;
  double total_loss;
  double accuracy;
  double intra;
  double inter;
  double ratio;
} FqRoundReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The most recent error message on this thread, or NULL if the last call
 * succeeded. Valid until the next fedquad call on the same thread.
 */
const char *fq_last_error(void);

/**
 * Gaussian blobs. A negative or NaN `separation` selects the default
 * center distance of `4 * std`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum FqStatus fq_dataset_generate(size_t classes,
                                  size_t dim,
                                  size_t per_class,
                                  double std,
                                  double separation,
                                  uint64_t seed,
                                  struct FqDataset **out);

/**
 * Loads a `label,f0,...` CSV. `declared_classes == 0` infers the class
 * count from the labels.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FqStatus fq_dataset_load_csv(const char *path,
                                  size_t declared_classes,
                                  struct FqDataset **out);

/**
 * # Safety
 * `dataset` must be a live handle; `path` a NUL-terminated string.
 */
enum FqStatus fq_dataset_save_csv(const struct FqDataset *dataset, const char *path);

/**
 * Row count, feature dimension and class count.
 *
 * # Safety
 * `dataset` must be a live handle; each output pointer may be NULL to skip it.
 */
enum FqStatus fq_dataset_shape(const struct FqDataset *dataset,
                               size_t *out_rows,
                               size_t *out_dim,
                               size_t *out_classes);

/**
 * # Safety
 * `dataset` must be NULL or a handle not yet freed.
 */
void fq_dataset_free(struct FqDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle; `out` must be writable.
 */
enum FqStatus fq_partition_iid(const struct FqDataset *dataset,
                               size_t num_clients,
                               uint64_t seed,
                               struct FqPartitions **out);

/**
 * # Safety
 * `dataset` must be a live handle; `out` must be writable.
 */
enum FqStatus fq_partition_dirichlet(const struct FqDataset *dataset,
                                     size_t num_clients,
                                     double alpha,
                                     uint64_t seed,
                                     size_t min_samples,
                                     struct FqPartitions **out);

/**
 * # Safety
 * `partitions` must be a live handle; `out` must be writable.
 */
enum FqStatus fq_partitions_count(const struct FqPartitions *partitions, size_t *out);

/**
 * Sorted row indices of one client.
 *
 * # Safety
 * `partitions` must be a live handle; `buf` must hold `cap` values.
 */
enum FqStatus fq_partitions_client_indices(const struct FqPartitions *partitions,
                                           size_t client,
                                           size_t *buf,
                                           size_t cap,
                                           size_t *out_len);

/**
 * # Safety
 * `partitions` must be NULL or a handle not yet freed.
 */
void fq_partitions_free(struct FqPartitions *partitions);

/**
 * Quadruplet hinge loss over `rows` embeddings of width `cols` per role.
 *
 * # Safety
 * Each role pointer must reference `rows * cols` doubles; `out` must be writable.
 */
enum FqStatus fq_quad_star(const double *anchors,
                           const double *positives,
                           const double *negatives1,
                           const double *negatives2,
                           size_t rows,
                           size_t cols,
                           double margin1,
                           double margin2,
                           bool squared,
                           double *out);

/**
 * The sorted ids of the clients taking part in `round`.
 *
 * # Safety
 * `buf` must hold `cap` values; `out_len` must be writable.
 */
enum FqStatus fq_select_clients(size_t num_clients,
                                double fraction,
                                size_t round,
                                uint64_t seed,
                                size_t *buf,
                                size_t cap,
                                size_t *out_len);

/**
 * # Safety
 * `hidden_dims` must reference `num_hidden` values; `out` must be writable.
 */
enum FqStatus fq_model_build(size_t input_dim,
                             const size_t *hidden_dims,
                             size_t num_hidden,
                             size_t embedding_dim,
                             size_t num_classes,
                             uint64_t seed,
                             struct FqModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FqStatus fq_model_load(const char *path, struct FqModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum FqStatus fq_model_save(const struct FqModel *model, const char *path);

/**
 * Input width, embedding width, class count and total scalar parameters.
 *
 * # Safety
 * `model` must be a live handle; each output pointer may be NULL to skip it.
 */
enum FqStatus fq_model_shape(const struct FqModel *model,
                             size_t *out_input_dim,
                             size_t *out_embedding_dim,
                             size_t *out_classes,
                             size_t *out_param_count);

/**
 * Embeds `rows` inputs of width `cols`; writes `rows * embedding_dim` values.
 *
 * # Safety
 * `inputs` must reference `rows * cols` doubles; `buf` must hold `cap` values.
 */
enum FqStatus fq_model_embed(const struct FqModel *model,
                             const double *inputs,
                             size_t rows,
                             size_t cols,
                             double *buf,
                             size_t cap,
                             size_t *out_len);

/**
 * Fraction of `dataset` rows whose predicted class matches the label.
 *
 * # Safety
 * `model` and `dataset` must be live handles; `out` must be writable.
 */
enum FqStatus fq_model_accuracy(const struct FqModel *model,
                                const struct FqDataset *dataset,
                                double *out);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void fq_model_free(struct FqModel *model);

/**
 * Runs a full experiment from config text (the CLI's `key = value` format).
 * `workers == 0` keeps the default thread pool. Nothing is written to disk.
 *
 * # Safety
 * `config_text` must be a NUL-terminated string; `out` must be writable.
 */
enum FqStatus fq_run_experiment(const char *config_text, size_t workers, struct FqRun **out);

/**
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum FqStatus fq_run_round_count(const struct FqRun *run, size_t *out);

/**
 * Report for round index `index` (0-based; the report's `round` is 1-based).
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum FqStatus fq_run_round_report(const struct FqRun *run, size_t index, struct FqRoundReport *out);

/**
 * A copy of the final global model; free it with [`fq_model_free`].
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum FqStatus fq_run_final_model(const struct FqRun *run, struct FqModel **out);

/**
 * Writes `results.csv`, the checkpoint, the partition manifest and the
 * resolved config into `dir`, exactly as the CLI's `run` does.
 *
 * # Safety
 * `run` must be a live handle; `dir` a NUL-terminated string.
 */
enum FqStatus fq_run_write(const struct FqRun *run, const char *dir);

/**
 * # Safety
 * `run` must be NULL or a handle not yet freed.
 */
void fq_run_free(struct FqRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDQUAD_H */
