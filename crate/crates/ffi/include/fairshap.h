#ifndef FAIRSHAP_H
#define FAIRSHAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FsStatus {
  FS_STATUS_OK = 0,
  FS_STATUS_NULL_ARGUMENT = 1,
  FS_STATUS_INVALID_UTF8 = 2,
  FS_STATUS_NOT_FOUND = 3,
  FS_STATUS_IO = 4,
  FS_STATUS_PARSE = 5,
  FS_STATUS_INVALID_ARGUMENT = 6,
  FS_STATUS_COMPUTATION = 7,
  FS_STATUS_OUT_OF_RANGE = 8,
  FS_STATUS_PANIC = 9,
} FsStatus;

/**
 * A loaded, encoded and split dataset.
 */
typedef struct FsDataset FsDataset;

/**
 * A stored model of any kind.
 */
typedef struct FsModel FsModel;

/**
 * The reports of one explanation: one for accuracy and dp, one per
 * conditioning cell for eo and cdp.
 */
typedef struct FsReport FsReport;

typedef struct FsExplainOptions {
  /**
   * 0 for exact enumeration, 1 for sampled permutations.
   */
  uint32_t sampled;
  size_t permutations;
  /**
   * Background rows; 0 uses the estimator default.
   */
  size_t background;
  /**
   * Aggregation rows; 0 uses every row of the split.
   */
  size_t rows;
  uint64_t seed;
  size_t target_class;
} FsExplainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *fs_last_error(void);

/**
 * Library version as a static string.
 */
const char *fs_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void fs_string_free(char *s);

/**
 * Loads a bundle written by `fairshap data prepare`.
 *
 * # Safety
 * `dir` must be a nul-terminated string; `out` must be writable.
 */
enum FsStatus fs_dataset_load_bundle(const char *dir, struct FsDataset **out);

/**
 * The seeded five-feature synthetic dataset.
 *
 * # Safety
 * `out` must be writable.
 */
enum FsStatus fs_dataset_synthetic(size_t rows, uint64_t seed, struct FsDataset **out);

/**
 * # Safety
 * `ds` must be null or a handle from this library, not yet freed.
 */
void fs_dataset_free(struct FsDataset *ds);

/**
 * Rows in `split` ("train", "validation", "test"); 0 on a bad argument.
 *
 * # Safety
 * `ds` must be a live handle; `split` a nul-terminated string.
 */
size_t fs_dataset_rows(const struct FsDataset *ds, const char *split);

/**
 * Encoded column count, the input width models expect.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t fs_dataset_columns(const struct FsDataset *ds);

/**
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t fs_dataset_players(const struct FsDataset *ds);

/**
 * Name of feature group `index`; free with [`fs_string_free`]. Null when
 * out of range.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
char *fs_dataset_player_name(const struct FsDataset *ds, size_t index);

/**
 * Copies the encoded features of `split` (row-major) into `out`, which
 * must hold `rows * columns` values.
 *
 * # Safety
 * `ds` must be a live handle, `split` a nul-terminated string and `out`
 * writable for `len` doubles.
 */
enum FsStatus fs_dataset_features(const struct FsDataset *ds,
                                  const char *split,
                                  double *out,
                                  size_t len);

/**
 * Loads a model file. Wrapper models also load their base, resolved
 * relative to the file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum FsStatus fs_model_load(const char *path, struct FsModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library, not yet freed.
 */
void fs_model_free(struct FsModel *model);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t fs_model_input_width(const struct FsModel *model);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t fs_model_classes(const struct FsModel *model);

/**
 * Class probabilities for `n_rows` encoded rows. `x` holds
 * `n_rows * input_width` values and `out` `n_rows * classes`.
 *
 * # Safety
 * `model` must be a live handle; `x` readable and `out` writable for the
 * sizes above.
 */
enum FsStatus fs_model_predict(const struct FsModel *model,
                               const double *x,
                               size_t n_rows,
                               double *out,
                               size_t out_len);

/**
 * Evaluates `metric` ("accuracy", "dp" or "eo") of a model on `split`.
 * For accuracy the expected accuracy is returned; for the fairness
 * metrics the absolute difference.
 *
 * # Safety
 * Handles must be live, strings nul-terminated and `value` writable.
 */
enum FsStatus fs_metric(const struct FsModel *model,
                        const struct FsDataset *ds,
                        const char *metric,
                        const char *split,
                        double *value);

/**
 * Exact mode, every aggregation row, default background, class 1.
 */
struct FsExplainOptions fs_explain_options_default(void);

/**
 * Global Shapley values of a model for `kind` ("accuracy", "dp", "eo" or
 * "cdp"). `resolving` lists the cdp resolving features, comma separated;
 * it may be null for the other kinds.
 *
 * # Safety
 * Handles must be live, `kind` and `split` nul-terminated, `resolving`
 * null or nul-terminated, `opts` null or readable, and `out` writable.
 */
enum FsStatus fs_explain(const struct FsModel *model,
                         const struct FsDataset *ds,
                         const char *kind,
                         const char *split,
                         const char *resolving,
                         const struct FsExplainOptions *opts,
                         struct FsReport **out);

/**
 * # Safety
 * `report` must be null or a handle from this library, not yet freed.
 */
void fs_report_free(struct FsReport *report);

/**
 * Number of reports (conditioning cells) in the explanation.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
size_t fs_report_count(const struct FsReport *report);

/**
 * Players of report `index`; 0 when out of range.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
size_t fs_report_players(const struct FsReport *report, size_t index);

/**
 * Copies the attributions of report `index` into `out` (`len` must equal
 * the player count), plus the offset and metric value when non-null.
 *
 * # Safety
 * `report` must be a live handle; `out` writable for `len` doubles;
 * `offset` and `metric` null or writable.
 */
enum FsStatus fs_report_values(const struct FsReport *report,
                               size_t index,
                               double *out,
                               size_t len,
                               double *offset,
                               double *metric);

/**
 * Player name `player` of report `index`; free with [`fs_string_free`].
 *
 * # Safety
 * `report` must be null or a live handle.
 */
char *fs_report_player_name(const struct FsReport *report, size_t index, size_t player);

/**
 * Report `index` as JSON; free with [`fs_string_free`]. Null on error.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
char *fs_report_json(const struct FsReport *report, size_t index);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FAIRSHAP_H */
