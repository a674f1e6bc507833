/* C interface to the voxshape volumetric shape classifier. */

#ifndef VOXSHAPE_H
#define VOXSHAPE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible API call.
 */
typedef enum VsStatus {
  VsStatus_Ok = 0,
  /**
   * A required pointer argument was null.
   */
  VsStatus_NullArgument = 1,
  /**
   * Argument values are out of range (dims, indices, buffer sizes).
   */
  VsStatus_InvalidArgument = 2,
  /**
   * Filesystem or decode failure while loading an artifact.
   */
  VsStatus_Io = 3,
  /**
   * The model rejected the input (wrong dims, arithmetic failure).
   */
  VsStatus_Model = 4,
  /**
   * The checkpoint carries no classification head.
   */
  VsStatus_NoClassifier = 5,
  /**
   * The checkpoint carries no decoder.
   */
  VsStatus_NoDecoder = 6,
  /**
   * Internal panic; state is unchanged but the call did nothing.
   */
  VsStatus_Panic = 7,
} VsStatus;

/**
 * Opaque mask-dataset handle.
 */
typedef struct VsDataset VsDataset;

/**
 * Opaque trained-model handle (auto-encoder plus optional heads).
 */
typedef struct VsModel VsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message for this thread into `buf` (NUL-terminated,
 * truncated to `cap` bytes). Returns the full message length in bytes,
 * excluding the NUL, regardless of truncation; `buf` may be null to query
 * the length.
 *
 * # Safety
 * `buf` must be valid for writes of `cap` bytes, or null.
 */
uintptr_t vs_last_error(char *buf, uintptr_t cap);

/**
 * Load a model checkpoint written by the `voxshape` trainer.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for a single
 * pointer write. On success `*out` owns the model until `vs_model_free`.
 */
enum VsStatus vs_model_load(const char *path, struct VsModel **out);

/**
 * Release a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must be null or a pointer from `vs_model_load` not yet freed.
 */
void vs_model_free(struct VsModel *model);

/**
 * Input cube edge the encoder expects; 0 on null.
 *
 * # Safety
 * `model` must be null or a live pointer from `vs_model_load`.
 */
uintptr_t vs_model_input_size(const struct VsModel *model);

/**
 * Shape-vector dimension d; 0 on null.
 *
 * # Safety
 * `model` must be null or a live pointer from `vs_model_load`.
 */
uintptr_t vs_model_shape_dim(const struct VsModel *model);

/**
 * 1 if the checkpoint can classify (network or SVM head), else 0.
 *
 * # Safety
 * `model` must be null or a live pointer from `vs_model_load`.
 */
int32_t vs_model_has_classifier(const struct VsModel *model);

/**
 * Encode a mask into its d-dimensional shape vector. The mask is cropped to
 * its bounding box and rescaled to the model's input cube first.
 *
 * # Safety
 * `model` must be live; `voxels` must hold `dim0*dim1*dim2` bytes;
 * `out_vector` must be valid for `vs_model_shape_dim(model)` doubles.
 */
enum VsStatus vs_model_encode(const struct VsModel *model,
                              const uint8_t *voxels,
                              uintptr_t dim0,
                              uintptr_t dim1,
                              uintptr_t dim2,
                              double *out_vector);

/**
 * Score a mask: classifier probability in (0,1) when the checkpoint has a
 * network head, otherwise the raw SVM margin. The decision conventions are
 * `p >= 0.5` and `margin >= 0` for abnormal.
 *
 * # Safety
 * `model` must be live; `voxels` must hold `dim0*dim1*dim2` bytes;
 * `out_score` must be valid for one double write.
 */
enum VsStatus vs_model_score(const struct VsModel *model,
                             const uint8_t *voxels,
                             uintptr_t dim0,
                             uintptr_t dim1,
                             uintptr_t dim2,
                             double *out_score);

/**
 * Run the auto-encoder round trip and write the binarized reconstruction
 * (threshold 0.5) as `V*V*V` bytes where `V = vs_model_input_size(model)`.
 *
 * # Safety
 * `model` must be live; `voxels` must hold `dim0*dim1*dim2` bytes;
 * `out_voxels` must be valid for `V*V*V` byte writes.
 */
enum VsStatus vs_model_reconstruct(const struct VsModel *model,
                                   const uint8_t *voxels,
                                   uintptr_t dim0,
                                   uintptr_t dim1,
                                   uintptr_t dim2,
                                   uint8_t *out_voxels);

/**
 * Load a mask dataset directory (manifest plus packed masks).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for a single
 * pointer write. On success `*out` owns the dataset until `vs_dataset_free`.
 */
enum VsStatus vs_dataset_load(const char *path, struct VsDataset **out);

/**
 * Release a dataset handle. Null is a no-op.
 *
 * # Safety
 * `dataset` must be null or a pointer from `vs_dataset_load` not yet freed.
 */
void vs_dataset_free(struct VsDataset *dataset);

/**
 * Number of cases; 0 on null.
 *
 * # Safety
 * `dataset` must be null or a live pointer from `vs_dataset_load`.
 */
uintptr_t vs_dataset_count(const struct VsDataset *dataset);

/**
 * Copy the case id at `index` into `buf` (NUL-terminated, truncated to
 * `cap`). Returns the id length in bytes via `out_len` when non-null.
 *
 * # Safety
 * `dataset` must be live; `buf` must be valid for `cap` byte writes or
 * null; `out_len` must be valid for one write or null.
 */
enum VsStatus vs_dataset_case_id(const struct VsDataset *dataset,
                                 uintptr_t index,
                                 char *buf,
                                 uintptr_t cap,
                                 uintptr_t *out_len);

/**
 * Ground-truth label at `index`: 0 normal, 1 abnormal.
 *
 * # Safety
 * `dataset` must be live; `out_label` must be valid for one write.
 */
enum VsStatus vs_dataset_label(const struct VsDataset *dataset,
                               uintptr_t index,
                               uint8_t *out_label);

/**
 * Mask dimensions at `index`, written as three values.
 *
 * # Safety
 * `dataset` must be live; `out_dims` must be valid for three writes.
 */
enum VsStatus vs_dataset_dims(const struct VsDataset *dataset,
                              uintptr_t index,
                              uintptr_t *out_dims);

/**
 * Copy the mask at `index` into `buf` as one byte per voxel, row-major.
 * `cap` must be at least the product of the case dims.
 *
 * # Safety
 * `dataset` must be live; `buf` must be valid for `cap` byte writes.
 */
enum VsStatus vs_dataset_copy_mask(const struct VsDataset *dataset,
                                   uintptr_t index,
                                   uint8_t *buf,
                                   uintptr_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOXSHAPE_H */
