/* cropda C interface, ABI version 1. */

#ifndef CROPDA_H
#define CROPDA_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum CropdaStatus {
  CROPDA_STATUS_OK = 0,
  CROPDA_STATUS_INVALID_ARGUMENT = 1,
  CROPDA_STATUS_NUMERICAL_FAILURE = 2,
  CROPDA_STATUS_TRAINING_FAILURE = 3,
  CROPDA_STATUS_FORMAT = 4,
  CROPDA_STATUS_IO = 5,
  CROPDA_STATUS_NULL_POINTER = 6,
  CROPDA_STATUS_BUFFER_TOO_SMALL = 7,
  CROPDA_STATUS_PANIC = 8,
} CropdaStatus;

/**
 * Assimilation method selector.
 */
typedef enum CropdaMethod {
  CROPDA_METHOD_OPEN_LOOP = 0,
  CROPDA_METHOD_ENKF = 1,
  CROPDA_METHOD_ENKF_LSTM = 2,
} CropdaMethod;

/**
 * A trained assimilation emulator.
 */
typedef struct CropdaEmulator CropdaEmulator;

/**
 * Experiment preset plus assimilation settings.
 */
typedef struct CropdaExperiment CropdaExperiment;

/**
 * One season of weather and observations, with optional truth.
 */
typedef struct CropdaSeason CropdaSeason;

/**
 * Error metrics of one prediction.
 */
typedef struct CropdaMetrics {
  double mse;
  double rmse;
  double mae;
} CropdaMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cropda_version(void);

/**
 * Message of the last failed call on this thread (empty after success).
 * Valid until the next call into the library from this thread.
 */
const char *cropda_last_error(void);

/**
 * Loads a preset (shipped name or file) and an optional config file.
 * The preset argument takes precedence over the config's `preset` key.
 *
 * # Safety
 * `preset` must be a valid C string; `config_path` may be null.
 */
enum CropdaStatus cropda_experiment_new(const char *preset,
                                        const char *config_path,
                                        struct CropdaExperiment **out);

/**
 * # Safety
 * `exp` must come from `cropda_experiment_new` or be null.
 */
void cropda_experiment_free(struct CropdaExperiment *exp);

/**
 * Sets the seed of season generation and of all perturbations.
 *
 * # Safety
 * `exp` must be a live handle.
 */
enum CropdaStatus cropda_experiment_set_seed(struct CropdaExperiment *exp, uint64_t seed);

/**
 * Overrides the number of training seasons and LSTM epochs (0 keeps the current value).
 *
 * # Safety
 * `exp` must be a live handle.
 */
enum CropdaStatus cropda_experiment_set_training(struct CropdaExperiment *exp,
                                                 size_t seasons,
                                                 size_t epochs);

/**
 * Season length of the experiment, or 0 for a null handle.
 *
 * # Safety
 * `exp` must be a live handle or null.
 */
size_t cropda_experiment_n_days(const struct CropdaExperiment *exp);

/**
 * Generates evaluation season `index` with synthetic observations.
 *
 * # Safety
 * `exp` must be a live handle and `out` writable.
 */
enum CropdaStatus cropda_season_generate(const struct CropdaExperiment *exp,
                                         size_t index,
                                         struct CropdaSeason **out);

/**
 * Loads a season from weather and observation CSV files; `truth_path` may be null.
 * Perturbations are seeded from `seed` exactly as the command-line tool does.
 *
 * # Safety
 * Paths must be valid C strings (except the nullable truth path).
 */
enum CropdaStatus cropda_season_load(const char *weather_path,
                                     const char *observations_path,
                                     const char *truth_path,
                                     uint64_t seed,
                                     struct CropdaSeason **out);

/**
 * # Safety
 * `season` must come from a season constructor or be null.
 */
void cropda_season_free(struct CropdaSeason *season);

/**
 * Number of days in a season, or 0 for a null handle.
 *
 * # Safety
 * `season` must be a live handle or null.
 */
size_t cropda_season_n_days(const struct CropdaSeason *season);

/**
 * Copies the true trajectory into `out[0..len)`.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum CropdaStatus cropda_season_truth(const struct CropdaSeason *season, double *out, size_t len);

/**
 * Copies observations into `out[0..len)`, with NaN on missing days.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum CropdaStatus cropda_season_observations(const struct CropdaSeason *season,
                                             double *out,
                                             size_t len);

/**
 * Runs one method on a season and writes its daily LAI into `out[0..len)`.
 * `emulator` is required for `CROPDA_METHOD_ENKF_LSTM` and ignored otherwise.
 *
 * # Safety
 * Handles must be live (emulator may be null); `out` must hold `len` doubles.
 */
enum CropdaStatus cropda_run(const struct CropdaExperiment *exp,
                             const struct CropdaSeason *season,
                             enum CropdaMethod method,
                             const struct CropdaEmulator *emulator,
                             double *out,
                             size_t len);

/**
 * Generates training seasons, runs the EnKF on them and trains an emulator.
 *
 * # Safety
 * `exp` must be a live handle and `out` writable.
 */
enum CropdaStatus cropda_emulator_train(const struct CropdaExperiment *exp,
                                        struct CropdaEmulator **out);

/**
 * # Safety
 * `path` must be a valid C string and `out` writable.
 */
enum CropdaStatus cropda_emulator_load(const char *path, struct CropdaEmulator **out);

/**
 * # Safety
 * `emulator` must be live and `path` a valid C string.
 */
enum CropdaStatus cropda_emulator_save(const struct CropdaEmulator *emulator, const char *path);

/**
 * # Safety
 * `emulator` must come from a constructor or be null.
 */
void cropda_emulator_free(struct CropdaEmulator *emulator);

/**
 * Localization taper at `distance` days for radius `radius`; NaN on invalid input.
 */
double cropda_gaspari_cohn(double distance, double radius);

/**
 * MSE, RMSE and MAE of `pred` against `truth`, both of length `n`.
 *
 * # Safety
 * `truth` and `pred` must point to `n` doubles; `out` must be writable.
 */
enum CropdaStatus cropda_metrics(const double *truth,
                                 const double *pred,
                                 size_t n,
                                 struct CropdaMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CROPDA_H */
