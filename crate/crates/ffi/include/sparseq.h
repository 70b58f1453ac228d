#ifndef SPARSEQ_H
#define SPARSEQ_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes. Zero is success.
typedef enum SqStatus {
  SQ_STATUS_OK = 0,
  SQ_STATUS_NULL_POINTER = 1,
  // Argument outside the operation's domain.
  SQ_STATUS_DOMAIN = 2,
  // Shapes or values that violate a type invariant.
  SQ_STATUS_VALIDATION = 3,
  SQ_STATUS_CONFIG = 4,
  SQ_STATUS_IO = 5,
  // Bad magic, header or payload.
  SQ_STATUS_FORMAT = 6,
  SQ_STATUS_TRAINING = 7,
  // A Rust panic was caught at the boundary.
  SQ_STATUS_PANIC = 8,
  // Message buffer too small; the message was truncated.
  SQ_STATUS_TRUNCATED = 9,
} SqStatus;

// Opaque accumulator of (label, predicted quantiles) rows.
typedef struct SqLabelTable SqLabelTable;

// Opaque trained model.
typedef struct SqModel SqModel;

// Labels from parallel arrays of length `len`.
typedef struct SqLabels {
  const uint32_t *track_ids;
  const size_t *rows;
  const size_t *cols;
  const double *heights;
  size_t len;
} SqLabels;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *sq_version(void);

// Copies the calling thread's last error message into `buf` (always
// NUL-terminated when `cap > 0`). Returns `Truncated` if it did not fit.
//
// # Safety
// `buf` must point to `cap` writable bytes or be null with `cap == 0`.
enum SqStatus sq_last_error_message(char *buf, size_t cap);

// Pinball loss of prediction `y_hat` for observation `y` at level `tau`.
//
// # Safety
// `out` must be a valid pointer.
enum SqStatus sq_pinball(double tau, double y, double y_hat, double *out);

// Mean multi-quantile pinball loss over the labels. With `use_shift`
// nonzero, each track is scored at its best of the nine one-pixel shifts.
//
// # Safety
// `taus` holds `n_taus` values, `stack` holds `n_taus * height * width`,
// `labels` describes valid arrays and `out` is writable.
enum SqStatus sq_quantile_loss(const double *taus,
                               size_t n_taus,
                               const float *stack,
                               size_t height,
                               size_t width,
                               const struct SqLabels *labels,
                               bool use_shift,
                               double *out);

// # Safety
// `taus` holds `n_taus` values; `out` is writable.
enum SqStatus sq_table_new(const double *taus, size_t n_taus, struct SqLabelTable **out);

// # Safety
// `table` comes from [`sq_table_new`] and is not used afterwards.
void sq_table_free(struct SqLabelTable *table);

// Appends one scene. The stack's levels must equal the table's.
//
// # Safety
// As for [`sq_quantile_loss`], with the table's level count as `N`.
enum SqStatus sq_table_push(struct SqLabelTable *table,
                            const float *stack,
                            size_t height,
                            size_t width,
                            const struct SqLabels *labels);

// # Safety
// `table` is a live handle, `out` is writable.
enum SqStatus sq_table_len(const struct SqLabelTable *table, size_t *out);

// Fraction of labels at or below the channel's prediction.
//
// # Safety
// `table` is a live handle, `out` is writable.
enum SqStatus sq_table_empirical_coverage(const struct SqLabelTable *table,
                                          size_t channel,
                                          double *out);

// PICP and MPIW of the central interval at level `alpha`.
//
// # Safety
// `table` is a live handle; `picp` and `mpiw` are writable.
enum SqStatus sq_table_interval(const struct SqLabelTable *table,
                                double alpha,
                                double *picp,
                                double *mpiw);

// Loads a `QRM1` checkpoint.
//
// # Safety
// `path` is a NUL-terminated UTF-8 string; `out` is writable.
enum SqStatus sq_model_load(const char *path, struct SqModel **out);

// # Safety
// `model` comes from [`sq_model_load`] and is not used afterwards.
void sq_model_free(struct SqModel *model);

// Number of input feature channels the model expects.
//
// # Safety
// `model` is a live handle, `out` is writable.
enum SqStatus sq_model_input_channels(const struct SqModel *model, size_t *out);

// Predicts quantile rasters at `taus` for a channel-major
// `channels x height x width` input and writes `n_taus x height x width`
// values to `out`.
//
// # Safety
// `input` holds `channels * height * width` values, `taus` holds `n_taus`,
// `out` has room for `n_taus * height * width`.
enum SqStatus sq_model_predict_quantiles(const struct SqModel *model,
                                         const float *input,
                                         size_t channels,
                                         size_t height,
                                         size_t width,
                                         const double *taus,
                                         size_t n_taus,
                                         float *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPARSEQ_H */
