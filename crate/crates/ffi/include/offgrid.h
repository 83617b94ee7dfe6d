#ifndef OFFGRID_H
#define OFFGRID_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum OffgridStatus {
  OFFGRID_STATUS_OK = 0,
  OFFGRID_STATUS_NULL_POINTER = 1,
  OFFGRID_STATUS_INVALID_ARGUMENT = 2,
  OFFGRID_STATUS_CONFIG = 3,
  OFFGRID_STATUS_NUMERICAL = 4,
  OFFGRID_STATUS_IO = 5,
  OFFGRID_STATUS_FORMAT = 6,
  OFFGRID_STATUS_PANIC = 7,
} OffgridStatus;

// Restoration method selector.
typedef enum OffgridMethod {
  OFFGRID_METHOD_PROPOSED = 0,
  OFFGRID_METHOD_LSLP = 1,
  OFFGRID_METHOD_IFFT = 2,
} OffgridMethod;

// Learned tight-frame filter bank, bound to a sample grid.
typedef struct OffgridBank OffgridBank;

// Experiment configuration (see the `key = value` keys of the CLI).
typedef struct OffgridConfig OffgridConfig;

// Real image or edge map.
typedef struct OffgridImage OffgridImage;

// Forward (sampling) operator.
typedef struct OffgridOperator OffgridOperator;

// Fourier samples on a centered grid.
typedef struct OffgridSpectrum OffgridSpectrum;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next failing call on the same thread.
const char *offgrid_last_error(void);

// Library version as a static NUL-terminated string.
const char *offgrid_version(void);

// Default configuration.
//
// # Safety
// `out` must be a valid pointer to writable storage.
enum OffgridStatus offgrid_config_new(struct OffgridConfig **out);

// Configuration read from a `key = value` file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum OffgridStatus offgrid_config_from_file(const char *path, struct OffgridConfig **out);

// Sets one configuration key.
//
// # Safety
// `cfg` must come from this library; `key` and `value` must be NUL-terminated.
enum OffgridStatus offgrid_config_set(struct OffgridConfig *cfg,
                                      const char *key,
                                      const char *value);

// # Safety
// `cfg` must be null or come from this library and not be used afterwards.
void offgrid_config_free(struct OffgridConfig *cfg);

// Runs every stage into the configured output directory.
//
// # Safety
// `cfg` must come from this library.
enum OffgridStatus offgrid_run_pipeline(const struct OffgridConfig *cfg);

// Spectrum from `2 * n1 * n2` interleaved doubles.
//
// # Safety
// `values` must point to `2 * n1 * n2` readable doubles; `out` writable.
enum OffgridStatus offgrid_spectrum_new(size_t n1,
                                        size_t n2,
                                        const double *values,
                                        struct OffgridSpectrum **out);

// Fourier samples of a built-in scene (`square`, `square_disk`).
//
// # Safety
// `scene` must be NUL-terminated; `out` writable.
enum OffgridStatus offgrid_spectrum_phantom(const char *scene,
                                            size_t n1,
                                            size_t n2,
                                            struct OffgridSpectrum **out);

// Grid dimensions of a spectrum.
//
// # Safety
// `s` must come from this library; `n1` and `n2` writable.
enum OffgridStatus offgrid_spectrum_dims(const struct OffgridSpectrum *s, size_t *n1, size_t *n2);

// Copies the values as interleaved doubles; `len` counts doubles and must
// be exactly `2 * n1 * n2`.
//
// # Safety
// `buf` must point to `len` writable doubles.
enum OffgridStatus offgrid_spectrum_copy(const struct OffgridSpectrum *s, double *buf, size_t len);

// # Safety
// `s` must be null or come from this library and not be used afterwards.
void offgrid_spectrum_free(struct OffgridSpectrum *s);

// Sampling mask from `n1 * n2` bytes, nonzero meaning sampled.
//
// # Safety
// `mask` must point to `n1 * n2` readable bytes; `out` writable.
enum OffgridStatus offgrid_operator_mask(size_t n1,
                                         size_t n2,
                                         const uint8_t *mask,
                                         struct OffgridOperator **out);

// The sampling operator the configuration describes on its grid.
//
// # Safety
// `cfg` must come from this library; `out` writable.
enum OffgridStatus offgrid_operator_from_config(const struct OffgridConfig *cfg,
                                                struct OffgridOperator **out);

// Centered `i1 x i2` lowpass block of an `n1 x n2` grid.
//
// # Safety
// `out` must be writable.
enum OffgridStatus offgrid_operator_lowpass(size_t n1,
                                            size_t n2,
                                            size_t i1,
                                            size_t i2,
                                            struct OffgridOperator **out);

// Variable-density random mask.
//
// # Safety
// `out` must be writable.
enum OffgridStatus offgrid_operator_random(size_t n1,
                                           size_t n2,
                                           double fraction,
                                           double density_power,
                                           size_t calib,
                                           uint64_t seed,
                                           struct OffgridOperator **out);

// `out = A s`.
//
// # Safety
// Handles must come from this library; `out` writable.
enum OffgridStatus offgrid_operator_apply(const struct OffgridOperator *op,
                                          const struct OffgridSpectrum *s,
                                          struct OffgridSpectrum **out);

// # Safety
// `op` must be null or come from this library and not be used afterwards.
void offgrid_operator_free(struct OffgridOperator *op);

// Learns a filter bank from the configured low-frequency block of `f` and
// binds it to the full grid of `f`.
//
// # Safety
// Handles must come from this library; `out` writable.
enum OffgridStatus offgrid_learn(const struct OffgridConfig *cfg,
                                 const struct OffgridSpectrum *f,
                                 const struct OffgridOperator *op,
                                 struct OffgridBank **out);

// Rank and filter count of a bank.
//
// # Safety
// `bank` must come from this library; `rank` and `m2` writable.
enum OffgridStatus offgrid_bank_info(const struct OffgridBank *bank, size_t *rank, size_t *m2);

// # Safety
// `bank` must be null or come from this library and not be used afterwards.
void offgrid_bank_free(struct OffgridBank *bank);

// Edge map sampled on a `p1 x p2` lattice over the unit cell.
//
// # Safety
// `bank` must come from this library; `out` writable.
enum OffgridStatus offgrid_edges(const struct OffgridBank *bank,
                                 size_t p1,
                                 size_t p2,
                                 struct OffgridImage **out);

// Restores `f` with the chosen method and returns the image.
//
// # Safety
// Handles must come from this library (`bank` may be null for `Ifft`);
// `out` writable.
enum OffgridStatus offgrid_restore(const struct OffgridConfig *cfg,
                                   enum OffgridMethod method,
                                   const struct OffgridSpectrum *f,
                                   const struct OffgridOperator *op,
                                   const struct OffgridBank *bank,
                                   struct OffgridImage **out);

// Image dimensions.
//
// # Safety
// `img` must come from this library; `n1` and `n2` writable.
enum OffgridStatus offgrid_image_dims(const struct OffgridImage *img, size_t *n1, size_t *n2);

// Copies the pixels; `len` must be exactly `n1 * n2`.
//
// # Safety
// `buf` must point to `len` writable doubles.
enum OffgridStatus offgrid_image_copy(const struct OffgridImage *img, double *buf, size_t len);

// # Safety
// `img` must be null or come from this library and not be used afterwards.
void offgrid_image_free(struct OffgridImage *img);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OFFGRID_H */
