#ifndef MCATLAS_H
#define MCATLAS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum McaStatus {
  MCA_STATUS_OK = 0,
  MCA_STATUS_NULL_POINTER = 1,
  MCA_STATUS_INVALID_ARGUMENT = 2,
  MCA_STATUS_IO = 3,
  MCA_STATUS_PARSE = 4,
  MCA_STATUS_CHECKPOINT = 5,
  MCA_STATUS_NUMERICAL = 6,
  MCA_STATUS_FAILED = 7,
  MCA_STATUS_PANIC = 8,
} McaStatus;

// The shape code of one frame under one model.
typedef struct McaLatent McaLatent;

// A trained atlas model.
typedef struct McaModel McaModel;

// A point-cloud sequence.
typedef struct McaSequence McaSequence;

// Metrics of one correspondence set. `sl2` is unscaled.
typedef struct McaPairMetrics {
  double sl2;
  double rank;
  double auc;
} McaPairMetrics;

// Mean and population standard deviation.
typedef struct McaMeanStd {
  double mean;
  double std;
} McaMeanStd;

// Sequence-level correspondence metrics. `sl2` is scaled by 10^4.
typedef struct McaMetrics {
  struct McaMeanStd sl2;
  struct McaMeanStd rank;
  struct McaMeanStd auc;
  struct McaMeanStd chamfer;
} McaMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until
// the next call on the same thread.
const char *mca_last_error_message(void);

// Loads a model from a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum McaStatus mca_model_load(const char *path, struct McaModel **out);

// # Safety
// `model` must come from [`mca_model_load`] or be null.
void mca_model_free(struct McaModel *model);

// Number of patches, or 0 for a null handle.
//
// # Safety
// `model` must be a live handle or null.
size_t mca_model_patch_count(const struct McaModel *model);

// Loads a sequence directory, optionally fitting frame 0 to the unit cube.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum McaStatus mca_sequence_load(const char *path, bool normalize, struct McaSequence **out);

// # Safety
// `seq` must come from [`mca_sequence_load`] or be null.
void mca_sequence_free(struct McaSequence *seq);

// Number of frames, or 0 for a null handle.
//
// # Safety
// `seq` must be a live handle or null.
size_t mca_sequence_frame_count(const struct McaSequence *seq);

// Point count of one frame.
//
// # Safety
// `seq` must be a live handle and `out` a valid pointer.
enum McaStatus mca_sequence_point_count(const struct McaSequence *seq, size_t frame, size_t *out);

// Copies the points of one frame into `out_xyz`, which holds `capacity`
// points.
//
// # Safety
// `seq` must be a live handle and `out_xyz` must hold `3 * capacity` doubles.
enum McaStatus mca_sequence_frame_points(const struct McaSequence *seq,
                                         size_t frame,
                                         double *out_xyz,
                                         size_t capacity);

// Encodes `n` points into a shape code.
//
// # Safety
// `model` must be a live handle, `xyz` must hold `3 * n` doubles and `out`
// must be a valid pointer.
enum McaStatus mca_model_encode(const struct McaModel *model,
                                const double *xyz,
                                size_t n,
                                struct McaLatent **out);

// # Safety
// `latent` must come from [`mca_model_encode`] or be null.
void mca_latent_free(struct McaLatent *latent);

// Maps `n` UV points of one patch to 3D.
//
// # Safety
// Handles must be live, `uv` must hold `2 * n` doubles and `out_xyz`
// `3 * n` doubles.
enum McaStatus mca_map_uv(const struct McaModel *model,
                          const struct McaLatent *latent,
                          size_t patch,
                          const double *uv,
                          size_t n,
                          double *out_xyz);

// Jacobians `[∂/∂u ∂/∂v]` of one patch at `n` UV points, each written as
// six doubles in row-major 3x2 order.
//
// # Safety
// Handles must be live, `uv` must hold `2 * n` doubles and `out_jac`
// `6 * n` doubles.
enum McaStatus mca_jacobians(const struct McaModel *model,
                             const struct McaLatent *latent,
                             size_t patch,
                             const double *uv,
                             size_t n,
                             double *out_jac);

// `m` well-spread points in the unit square, deterministic in `seed`.
//
// # Safety
// `out_uv` must hold `2 * m` doubles.
enum McaStatus mca_regular_uv_points(size_t m, uint64_t seed, double *out_uv);

// Metrics of `n` predicted points against their true positions. `auc`
// uses `thresholds` squared-error thresholds up to `max_threshold`.
//
// # Safety
// `predicted` and `truth` must hold `3 * n` doubles; `out` must be valid.
enum McaStatus mca_correspondence_metrics(const double *predicted,
                                          const double *truth,
                                          size_t n,
                                          double max_threshold,
                                          size_t thresholds,
                                          struct McaPairMetrics *out);

// Evaluates `model` on a labeled sequence over `pairs` random frame pairs
// (0 selects the default).
//
// # Safety
// Handles must be live and `out` valid.
enum McaStatus mca_evaluate(const struct McaModel *model,
                            const struct McaSequence *seq,
                            size_t pairs,
                            struct McaMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCATLAS_H */
