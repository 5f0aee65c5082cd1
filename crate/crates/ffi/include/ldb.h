#ifndef LDB_H
#define LDB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LdbStatus {
  LDB_STATUS_OK = 0,
  LDB_STATUS_NULL_ARGUMENT = 1,
  LDB_STATUS_INVALID_ARGUMENT = 2,
  LDB_STATUS_CONFIG = 3,
  LDB_STATUS_SHAPE = 4,
  LDB_STATUS_LAYER = 5,
  LDB_STATUS_DATA = 6,
  LDB_STATUS_FORMAT = 7,
  LDB_STATUS_IO = 8,
  LDB_STATUS_DIVERGED = 9,
  LDB_STATUS_MEASUREMENT = 10,
  LDB_STATUS_BUFFER_TOO_SMALL = 11,
  LDB_STATUS_PANIC = 12,
} LdbStatus;

typedef enum LdbMode {
  LDB_MODE_STANDARD_SGD = 0,
  LDB_MODE_DROP = 1,
} LdbMode;

typedef enum LdbSchedule {
  LDB_SCHEDULE_COSINE = 0,
  LDB_SCHEDULE_CONSTANT = 1,
} LdbSchedule;

typedef enum LdbSplit {
  LDB_SPLIT_TRAIN = 0,
  LDB_SPLIT_VAL = 1,
} LdbSplit;

typedef struct LdbDataset LdbDataset;

typedef struct LdbNetwork LdbNetwork;

typedef struct LdbReport LdbReport;

/**
 * Training configuration. Enum-typed settings are passed as their integer
 * values so that out-of-range input is reported instead of trusted.
 */
typedef struct LdbTrainConfig {
  double p;
  uint32_t s;
  double kappa;
  double base_lr;
  uint32_t base_batch;
  uint32_t keep_head;
  uint32_t keep_tail;
  uint64_t selection_seed;
  bool reselect_every_step;
  uint32_t epochs;
  /**
   * An `LdbSchedule` value.
   */
  uint32_t schedule;
  double momentum;
  double weight_decay;
} LdbTrainConfig;

typedef struct LdbEpochSummary {
  uint32_t epoch;
  enum LdbMode mode;
  double lr;
  uint32_t batch;
  uint32_t steps;
  double train_loss;
  double val_accuracy;
  double ms_forward;
  double ms_backward_dx;
  double ms_backward_dw;
  double ms_update;
  double ms_train;
} LdbEpochSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ldb_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length plus
 * one, or 0 when the last call succeeded.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t ldb_last_error_message(char *buf, size_t len);

/**
 * Fills `out` with the default configuration.
 *
 * # Safety
 * `out` must be null or point to writable memory for one config.
 */
enum LdbStatus ldb_config_default(struct LdbTrainConfig *out);

/**
 * Drop or standard mode for `epoch` under sampling rate `s` (`s >= 1`).
 */
enum LdbMode ldb_mode_for_epoch(uint32_t epoch, uint32_t s);

/**
 * Learning rate and batch size for an epoch in `mode` (an `LdbMode` value).
 *
 * # Safety
 * `cfg` must be null or valid; `out_lr` and `out_batch` must be null or
 * writable.
 */
enum LdbStatus ldb_adjust_hyperparams(uint32_t mode,
                                      double scheduled_lr,
                                      const struct LdbTrainConfig *cfg,
                                      double *out_lr,
                                      uint32_t *out_batch);

/**
 * Builds a preset network (`mlp-<depth>`, `cnn-small`, `resnet-toy`).
 *
 * # Safety
 * `name` must be a NUL-terminated string; `input_shape` must point to
 * `rank` values; `out` must be writable.
 */
enum LdbStatus ldb_network_from_preset(const char *name,
                                       const size_t *input_shape,
                                       size_t rank,
                                       size_t classes,
                                       size_t width,
                                       uint64_t init_seed,
                                       struct LdbNetwork **out);

/**
 * # Safety
 * `net` must be null or a handle from this library not yet freed.
 */
void ldb_network_free(struct LdbNetwork *net);

/**
 * Number of input values per sample; 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t ldb_network_input_len(const struct LdbNetwork *net);

/**
 * # Safety
 * `net` must be null or a live handle.
 */
size_t ldb_network_classes(const struct LdbNetwork *net);

/**
 * # Safety
 * `net` must be null or a live handle.
 */
size_t ldb_network_param_layer_count(const struct LdbNetwork *net);

/**
 * Inference on `batch` samples laid out row-major in `x`; writes
 * `batch * classes` logits to `out`.
 *
 * # Safety
 * `x` must hold `batch * ldb_network_input_len(net)` values and `out`
 * `out_len` writable values.
 */
enum LdbStatus ldb_network_forward(const struct LdbNetwork *net,
                                   const double *x,
                                   size_t batch,
                                   double *out,
                                   size_t out_len);

/**
 * # Safety
 * `net` must be a live handle and `path` a NUL-terminated string.
 */
enum LdbStatus ldb_network_save(const struct LdbNetwork *net, const char *path);

/**
 * Loads parameters into an existing network of the same architecture.
 *
 * # Safety
 * `net` must be a live handle and `path` a NUL-terminated string.
 */
enum LdbStatus ldb_network_load(struct LdbNetwork *net, const char *path);

/**
 * Synthetic Gaussian blobs with an 80/20 train/validation split.
 *
 * # Safety
 * `out` must be writable.
 */
enum LdbStatus ldb_dataset_blobs(size_t n,
                                 size_t classes,
                                 size_t dim,
                                 double noise_sigma,
                                 uint64_t seed,
                                 struct LdbDataset **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum LdbStatus ldb_dataset_load_csv(const char *path, uint64_t split_seed, struct LdbDataset **out);

/**
 * # Safety
 * `images` and `labels` must be NUL-terminated strings and `out` writable.
 */
enum LdbStatus ldb_dataset_load_idx(const char *images,
                                    const char *labels,
                                    struct LdbDataset **out);

/**
 * # Safety
 * `ds` must be null or a handle from this library not yet freed.
 */
void ldb_dataset_free(struct LdbDataset *ds);

/**
 * Samples in `split` (an `LdbSplit` value); 0 for a null handle or an
 * unknown split.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t ldb_dataset_len(const struct LdbDataset *ds, uint32_t split_id);

/**
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t ldb_dataset_classes(const struct LdbDataset *ds);

/**
 * Fraction of `split` classified correctly.
 *
 * # Safety
 * `net` and `ds` must be live handles and `out_accuracy` writable.
 */
enum LdbStatus ldb_evaluate(const struct LdbNetwork *net,
                            const struct LdbDataset *ds,
                            uint32_t split_id,
                            double *out_accuracy);

/**
 * Trains `net` in place and returns a report handle.
 *
 * # Safety
 * `net` and `ds` must be live handles, `cfg` valid, `out` writable.
 */
enum LdbStatus ldb_train(struct LdbNetwork *net,
                         const struct LdbDataset *ds,
                         const struct LdbTrainConfig *cfg,
                         struct LdbReport **out);

/**
 * Plain SGD at `cfg.base_lr` and `cfg.base_batch`; the drop settings are
 * ignored.
 *
 * # Safety
 * As [`ldb_train`].
 */
enum LdbStatus ldb_train_baseline(struct LdbNetwork *net,
                                  const struct LdbDataset *ds,
                                  const struct LdbTrainConfig *cfg,
                                  struct LdbReport **out);

/**
 * # Safety
 * `report` must be null or a handle from this library not yet freed.
 */
void ldb_report_free(struct LdbReport *report);

/**
 * # Safety
 * `report` must be null or a live handle.
 */
size_t ldb_report_epoch_count(const struct LdbReport *report);

/**
 * # Safety
 * `report` must be a live handle and `out` writable.
 */
enum LdbStatus ldb_report_epoch(const struct LdbReport *report,
                                size_t index,
                                struct LdbEpochSummary *out);

/**
 * Final validation accuracy; NaN for a null handle.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
double ldb_report_final_val_accuracy(const struct LdbReport *report);

/**
 * Training wall time in milliseconds, validation excluded; NaN for a null
 * handle.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
double ldb_report_total_wall_ms(const struct LdbReport *report);

/**
 * Writes the per-epoch CSV.
 *
 * # Safety
 * `report` must be a live handle and `path` a NUL-terminated string.
 */
enum LdbStatus ldb_report_write_csv(const struct LdbReport *report, const char *path);

/**
 * Writes `<stem>_epochs.csv`, `<stem>_summary.json` and `<stem>_loss.csv`
 * into `dir`. `baseline` may be null.
 *
 * # Safety
 * `report` must be a live handle, `baseline` null or live, `dir` and
 * `stem` NUL-terminated strings.
 */
enum LdbStatus ldb_report_emit(const struct LdbReport *report,
                               const struct LdbReport *baseline,
                               const char *dir,
                               const char *stem);

/**
 * Finite-difference check of selective weight gradients on a small instance
 * of `preset`. `out_passed` is set when every relative error is within
 * tolerance and no unselected layer received a gradient.
 *
 * # Safety
 * `preset` must be a NUL-terminated string; outputs must be writable.
 */
enum LdbStatus ldb_gradcheck(const char *preset,
                             uint64_t seed,
                             double *out_max_rel_error,
                             bool *out_passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LDB_H */
