#ifndef VBMKIT_H
#define VBMKIT_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Return code of every fallible call.
 */
typedef enum VbmStatus {
  VBM_STATUS_OK = 0,
  VBM_STATUS_NULL_POINTER = 1,
  VBM_STATUS_INVALID_ARGUMENT = 2,
  VBM_STATUS_IO = 3,
  VBM_STATUS_FORMAT = 4,
  VBM_STATUS_GEOMETRY = 5,
  VBM_STATUS_TISSUE = 6,
  VBM_STATUS_REGISTRATION = 7,
  VBM_STATUS_STATISTICS = 8,
  VBM_STATUS_PANIC = 9,
} VbmStatus;

/**
 * Displacement field in voxel units.
 */
typedef struct VbmField VbmField;

/**
 * Scalar volume, x fastest in memory.
 */
typedef struct VbmVolume VbmVolume;

/**
 * Registration settings; start from [`vbm_register_options_default`].
 */
typedef struct VbmRegisterOptions {
  size_t iterations;
  double mu;
  double lambda;
  /**
   * Non-positive selects 0.01 divided by the voxel count.
   */
  double big_lambda;
  uint32_t tau;
  double initial_step;
  bool multiresolution;
} VbmRegisterOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *vbm_last_error(void);

/**
 * Forgets the stored error message.
 */
void vbm_clear_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *vbm_version(void);

struct VbmRegisterOptions vbm_register_options_default(void);

/**
 * Diffeomorphic registration of `moving` to `fixed`. Writes the forward
 * deformation (warping `moving` onto `fixed`), its inverse, and the
 * warped image. Any of the three out-pointers may be null.
 *
 * # Safety
 * `moving`, `fixed` and `opts` must be valid; non-null outputs writable.
 */
enum VbmStatus vbm_register(const struct VbmVolume *moving,
                            const struct VbmVolume *fixed,
                            const struct VbmRegisterOptions *opts,
                            struct VbmField **forward,
                            struct VbmField **backward,
                            struct VbmVolume **warped);

/**
 * Resamples `vol` through `field`.
 *
 * # Safety
 * `field` and `vol` must be live handles and `out` writable.
 */
enum VbmStatus vbm_field_warp(const struct VbmField *field,
                              const struct VbmVolume *vol,
                              struct VbmVolume **out);

/**
 * Voxel-wise Jacobian determinant of the deformation.
 *
 * # Safety
 * `field` must be a live handle and `out` writable.
 */
enum VbmStatus vbm_field_jacobian(const struct VbmField *field, struct VbmVolume **out);

/**
 * Smallest Jacobian determinant of the deformation.
 *
 * # Safety
 * `field` must be a live handle and `out` writable.
 */
enum VbmStatus vbm_field_min_jacobian(const struct VbmField *field, double *out);

/**
 * Releases a field; null is ignored.
 *
 * # Safety
 * `field` must come from this library and not be used afterwards.
 */
void vbm_field_free(struct VbmField *field);

/**
 * Copies `nx*ny*nz` values from `data` into a new volume with the given
 * voxel spacing in millimetres and an axis-aligned world frame.
 *
 * # Safety
 * `data` must point to `nx*ny*nz` readable doubles and `out` must be writable.
 */
enum VbmStatus vbm_volume_new(size_t nx,
                              size_t ny,
                              size_t nz,
                              const double *spacing,
                              const double *data,
                              struct VbmVolume **out);

/**
 * Reads a NIfTI-1 file (`.nii` or `.nii.gz`).
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` writable.
 */
enum VbmStatus vbm_volume_read(const char *path, struct VbmVolume **out);

/**
 * Writes a float32 NIfTI-1 file.
 *
 * # Safety
 * `vol` must be a live handle and `path` a nul-terminated string.
 */
enum VbmStatus vbm_volume_write(const struct VbmVolume *vol, const char *path);

/**
 * Writes the three dimensions into `dims`.
 *
 * # Safety
 * `vol` must be a live handle and `dims` must hold three values.
 */
enum VbmStatus vbm_volume_dims(const struct VbmVolume *vol, size_t *dims);

/**
 * Copies the voxel values into `buf`, which must hold `len` doubles with
 * `len` equal to the voxel count.
 *
 * # Safety
 * `vol` must be a live handle and `buf` writable for `len` doubles.
 */
enum VbmStatus vbm_volume_copy_data(const struct VbmVolume *vol, double *buf, size_t len);

/**
 * Releases a volume; null is ignored.
 *
 * # Safety
 * `vol` must come from this library and not be used afterwards.
 */
void vbm_volume_free(struct VbmVolume *vol);

/**
 * Gaussian smoothing with a kernel of `fwhm_mm` full width at half maximum.
 *
 * # Safety
 * `vol` must be a live handle and `out` writable.
 */
enum VbmStatus vbm_smooth(const struct VbmVolume *vol, double fwhm_mm, struct VbmVolume **out);

/**
 * Applies one augmentation, named as in the configuration file
 * (`"bias_field"`, `"ghosting"`, ...).
 *
 * # Safety
 * `vol` must be a live handle, `kind` a nul-terminated string and `out` writable.
 */
enum VbmStatus vbm_augment(const struct VbmVolume *vol,
                           const char *kind,
                           double magnitude,
                           uint64_t seed,
                           struct VbmVolume **out);

/**
 * Splits a tissue map with values in [0, 3] into CSF, GM and WM
 * probability maps.
 *
 * # Safety
 * `tissue` must be a live handle and the three out-pointers writable.
 */
enum VbmStatus vbm_tissue_probabilities(const struct VbmVolume *tissue,
                                        struct VbmVolume **csf,
                                        struct VbmVolume **gm,
                                        struct VbmVolume **wm);

/**
 * Dice overlap of one hard label between two tissue maps.
 *
 * # Safety
 * `a` and `b` must be live handles and `out` writable.
 */
enum VbmStatus vbm_dice(const struct VbmVolume *a,
                        const struct VbmVolume *b,
                        uint8_t label,
                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VBMKIT_H */
