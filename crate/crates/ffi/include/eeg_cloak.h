#ifndef EEG_CLOAK_H
#define EEG_CLOAK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EegCloakStatus {
  EEG_CLOAK_STATUS_OK = 0,
  EEG_CLOAK_STATUS_NULL_POINTER = 1,
  EEG_CLOAK_STATUS_INVALID_UTF8 = 2,
  EEG_CLOAK_STATUS_INVALID_ARGUMENT = 3,
  EEG_CLOAK_STATUS_CONFIG = 4,
  EEG_CLOAK_STATUS_IO = 5,
  EEG_CLOAK_STATUS_FORMAT = 6,
  EEG_CLOAK_STATUS_DISGUISE = 7,
  EEG_CLOAK_STATUS_STAGE = 8,
  EEG_CLOAK_STATUS_PANIC = 9,
} EegCloakStatus;

typedef enum EegCloakProvenance {
  EEG_CLOAK_PROVENANCE_REAL = 0,
  EEG_CLOAK_PROVENANCE_DUMMY = 1,
  EEG_CLOAK_PROVENANCE_DISGUISED = 2,
} EegCloakProvenance;

/**
 * A trained disguiser loaded from a checkpoint.
 */
typedef struct EegCloakDisguiser EegCloakDisguiser;

/**
 * One 3-channel topography image.
 */
typedef struct EegCloakImage EegCloakImage;

/**
 * A configured pipeline bound to a work directory.
 */
typedef struct EegCloakPipeline EegCloakPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static string.
 */
const char *eeg_cloak_version(void);

/**
 * Message of the last failed call on this thread, or NULL after a
 * successful one. Valid until the next call on the same thread.
 */
const char *eeg_cloak_last_error(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void eeg_cloak_string_free(char *s);

/**
 * Real image from `3 * height * width` channel-major floats in [0, 1].
 *
 * # Safety
 * `pixels` must point to `len` readable floats; `subject_id` must be a
 * NUL-terminated string; `out` must be writable.
 */
enum EegCloakStatus eeg_cloak_image_new(size_t height,
                                        size_t width,
                                        const float *pixels,
                                        size_t len,
                                        const char *subject_id,
                                        bool alcoholic,
                                        size_t stimulus,
                                        struct EegCloakImage **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum EegCloakStatus eeg_cloak_image_load(const char *path, struct EegCloakImage **out);

/**
 * # Safety
 * `image` must be a live handle; `path` a NUL-terminated string.
 */
enum EegCloakStatus eeg_cloak_image_save(const struct EegCloakImage *image, const char *path);

/**
 * # Safety
 * `image` must be a live handle or NULL.
 */
size_t eeg_cloak_image_height(const struct EegCloakImage *image);

/**
 * # Safety
 * `image` must be a live handle or NULL.
 */
size_t eeg_cloak_image_width(const struct EegCloakImage *image);

/**
 * # Safety
 * `image` must be a live handle; `out` must be writable.
 */
enum EegCloakStatus eeg_cloak_image_provenance(const struct EegCloakImage *image,
                                               enum EegCloakProvenance *out);

/**
 * Copies the `3 * height * width` pixels into `buf`.
 *
 * # Safety
 * `image` must be a live handle; `buf` must have room for `len` floats.
 */
enum EegCloakStatus eeg_cloak_image_pixels(const struct EegCloakImage *image,
                                           float *buf,
                                           size_t len);

/**
 * # Safety
 * `image` must come from this library and not have been freed.
 */
void eeg_cloak_image_free(struct EegCloakImage *image);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum EegCloakStatus eeg_cloak_disguiser_load(const char *path, struct EegCloakDisguiser **out);

/**
 * Image height the model accepts; 0 for NULL.
 *
 * # Safety
 * `model` must be a live handle or NULL.
 */
size_t eeg_cloak_disguiser_height(const struct EegCloakDisguiser *model);

/**
 * # Safety
 * `model` must be a live handle or NULL.
 */
size_t eeg_cloak_disguiser_width(const struct EegCloakDisguiser *model);

/**
 * Maps a real image to its disguised counterpart.
 *
 * # Safety
 * `model` and `image` must be live handles; `out` must be writable.
 */
enum EegCloakStatus eeg_cloak_disguiser_apply(const struct EegCloakDisguiser *model,
                                              const struct EegCloakImage *image,
                                              struct EegCloakImage **out);

/**
 * # Safety
 * `model` must come from this library and not have been freed.
 */
void eeg_cloak_disguiser_free(struct EegCloakDisguiser *model);

/**
 * Pipeline over `workdir`. `config_json` may be NULL for the defaults.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum EegCloakStatus eeg_cloak_pipeline_new(const char *config_json,
                                           const char *workdir,
                                           struct EegCloakPipeline **out);

/**
 * Runs every stage and hands back the ablation report as JSON, to be
 * released with [`eeg_cloak_string_free`]. With `synthetic`, the corpus is
 * generated first.
 *
 * # Safety
 * `pipeline` must be a live handle; `report_json` must be writable.
 */
enum EegCloakStatus eeg_cloak_pipeline_run_all(const struct EegCloakPipeline *pipeline,
                                               bool synthetic,
                                               char **report_json);

/**
 * # Safety
 * `pipeline` must come from this library and not have been freed.
 */
void eeg_cloak_pipeline_free(struct EegCloakPipeline *pipeline);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EEG_CLOAK_H */
