#ifndef T3SC_H
#define T3SC_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum T3scStatus {
  T3SC_STATUS_OK = 0,
  // A required pointer was null or a string was not UTF-8.
  T3SC_STATUS_INVALID_ARGUMENT = 1,
  // Bad shapes, configuration or model state.
  T3SC_STATUS_INVALID = 2,
  // File access or file format failure.
  T3SC_STATUS_IO = 3,
  // Non-finite values.
  T3SC_STATUS_NUMERIC = 4,
  // A panic was caught at the boundary.
  T3SC_STATUS_INTERNAL = 5,
} T3scStatus;

// An HSR cube with its metadata.
typedef struct T3scCube T3scCube;

// A loaded checkpoint.
typedef struct T3scModel T3scModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call on the same thread.
const char *t3sc_last_error(void);

// Library version as a static NUL-terminated string.
const char *t3sc_version(void);

// Loads a checkpoint into `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum T3scStatus t3sc_model_load(const char *path, struct T3scModel **out);

// # Safety
// `model` must come from [`t3sc_model_load`] and not be used afterwards.
void t3sc_model_free(struct T3scModel *model);

// Number of bands the spectral layer of `sensor` expects; a null `sensor`
// selects the only sensor of a single-sensor model.
//
// # Safety
// Pointers must be valid; `sensor` may be null.
enum T3scStatus t3sc_model_bands(const struct T3scModel *model, const char *sensor, size_t *out);

// Total number of trainable scalars.
//
// # Safety
// Pointers must be valid.
enum T3scStatus t3sc_model_param_count(const struct T3scModel *model, size_t *out);

// Whether the model carries a noise estimator, so blind denoising works.
//
// # Safety
// Pointers must be valid.
enum T3scStatus t3sc_model_has_estimator(const struct T3scModel *model, bool *out);

// Denoises `input` into `output` (both `c * h * w` floats) with block
// inference. With `blind` set, per-band weights come from the noise
// estimator.
//
// # Safety
// `input` and `output` must each hold `c * h * w` floats; `sensor` may be
// null.
enum T3scStatus t3sc_denoise(const struct T3scModel *model,
                             const char *sensor,
                             const float *input,
                             size_t c,
                             size_t h,
                             size_t w,
                             bool blind,
                             float *output);

// Adds synthetic noise described by `spec` (`iid:S`, `band:MIN:MAX`,
// `correlated[:B:E]`, `stripes[:S]`; deviations on the 0-255 scale).
//
// # Safety
// `input` and `output` must each hold `c * h * w` floats.
enum T3scStatus t3sc_add_noise(const char *spec,
                               uint64_t seed,
                               const float *input,
                               size_t c,
                               size_t h,
                               size_t w,
                               float *output);

// Band-averaged PSNR with peak 1; identical inputs give +infinity.
//
// # Safety
// `reference` and `test` must each hold `c * h * w` floats.
enum T3scStatus t3sc_mpsnr(const float *reference,
                           const float *test,
                           size_t c,
                           size_t h,
                           size_t w,
                           double *out);

// Reads an HSR file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum T3scStatus t3sc_cube_read(const char *path, struct T3scCube **out);

// Writes `c * h * w` floats as an HSR file, tagged with `sensor` unless it is
// null.
//
// # Safety
// `data` must hold `c * h * w` floats; strings must be NUL-terminated.
enum T3scStatus t3sc_cube_write(const char *path,
                                const float *data,
                                size_t c,
                                size_t h,
                                size_t w,
                                const char *sensor);

// Extents of a cube.
//
// # Safety
// All pointers must be valid.
enum T3scStatus t3sc_cube_shape(const struct T3scCube *cube, size_t *c, size_t *h, size_t *w);

// Samples of a cube, valid while the handle lives; null for a null handle.
//
// # Safety
// `cube` must be null or a live handle.
const float *t3sc_cube_data(const struct T3scCube *cube);

// # Safety
// `cube` must come from [`t3sc_cube_read`] and not be used afterwards.
void t3sc_cube_free(struct T3scCube *cube);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* T3SC_H */
