#ifndef EDETECT_H
#define EDETECT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>

/**
 * Outcome of an FFI call. Error codes match the CLI exit codes.
 */
typedef enum {
  ED_STATUS_OK = 0,
  ED_STATUS_NULL_POINTER = 1,
  ED_STATUS_CONFIG = 2,
  ED_STATUS_DATA = 3,
  ED_STATUS_CALIBRATION = 4,
  ED_STATUS_NUMERIC = 5,
  ED_STATUS_IO = 6,
  ED_STATUS_PANIC = 7,
} EdStatus;

/**
 * Which statistic [`ed_detector_run`] compares against its threshold.
 */
typedef enum {
  ED_STATISTIC_SHIRYAEV_ROBERTS = 0,
  ED_STATISTIC_CUSUM = 1,
} EdStatistic;

/**
 * A detector configuration: calibrated weights, grid and increment family.
 */
typedef struct EdCalibration EdCalibration;

/**
 * A running detector; owns its recursion state.
 */
typedef struct EdDetector EdDetector;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if the last call
 * succeeded. Valid until the next call into this library on the same thread.
 */
const char *ed_last_error_message(void);

/**
 * Finite mixture calibrated for binary data with pre-change success
 * probability at most `p0`, targeting gaps `Δ ∈ [delta_lower, delta_upper]`.
 */
EdStatus ed_calibrate_bernoulli(double alpha,
                                double p0,
                                double delta_lower,
                                double delta_upper,
                                size_t k_max,
                                EdCalibration **out);

/**
 * Finite mixture calibrated for `[0,1]`-valued data with pre-change mean at
 * most `mean_bound`; `delta_lower`/`delta_upper` bound the mean-to-variance
 * ratio. `exact` selects the linear increment `1 + λ(x/m − 1)`.
 */
EdStatus ed_calibrate_bounded(double alpha,
                              double mean_bound,
                              double delta_lower,
                              double delta_upper,
                              size_t k_max,
                              bool exact,
                              EdCalibration **out);

/**
 * Adaptive mixture for binary data: a core grid on `[delta_lower, delta0]`
 * carrying weight `r`, extended towards small gaps as the stream grows.
 */
EdStatus ed_calibrate_adaptive_bernoulli(double alpha,
                                         double p0,
                                         double delta_lower,
                                         double delta0,
                                         double r,
                                         double schedule_density,
                                         size_t k_max,
                                         EdCalibration **out);

/**
 * Parses a calibration file as written by `edetect calibrate`.
 */
EdStatus ed_calibration_from_toml(const char *text, EdCalibration **out);

/**
 * Serializes a calibration; free the string with [`ed_string_free`].
 */
EdStatus ed_calibration_to_toml(const EdCalibration *cal, char **out);

/**
 * Significance level the calibration was built for.
 */
EdStatus ed_calibration_alpha(const EdCalibration *cal, double *out);

/**
 * Number of baseline components present before the first observation.
 */
EdStatus ed_calibration_num_components(const EdCalibration *cal, size_t *out);

void ed_calibration_free(EdCalibration *cal);

/**
 * Fresh detector for `cal`; the calibration may be freed afterwards.
 */
EdStatus ed_detector_new(const EdCalibration *cal, EdDetector **out);

/**
 * Feeds one observation. `log_m_sr` and `log_m_cusum` may be null.
 * A rejected observation leaves the detector unchanged.
 */
EdStatus ed_detector_observe(EdDetector *det, double x, double *log_m_sr, double *log_m_cusum);

/**
 * Feeds `xs[0..n]` until the chosen statistic reaches `log_threshold`.
 * `*stop` receives the 1-based step of the crossing within this call, or 0
 * if none occurred; `*consumed` (nullable) the number of observations used.
 */
EdStatus ed_detector_run(EdDetector *det,
                         const double *xs,
                         size_t n,
                         EdStatistic statistic,
                         double log_threshold,
                         size_t *stop,
                         size_t *consumed);

/**
 * Observations consumed since creation.
 */
EdStatus ed_detector_steps(const EdDetector *det, size_t *out);

/**
 * Current `(log M_SR, log M_CUSUM)`; both −∞ before the first observation.
 */
EdStatus ed_detector_statistics(const EdDetector *det, double *log_m_sr, double *log_m_cusum);

void ed_detector_free(EdDetector *det);

void ed_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EDETECT_H */
