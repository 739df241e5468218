#ifndef OEMCOLL_H
#define OEMCOLL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes. Zero is success; the rest mirror the library error kinds
// plus a few that only arise at the boundary.
typedef enum OemStatus {
  OEM_STATUS_OK = 0,
  OEM_STATUS_NULL_POINTER = 1,
  OEM_STATUS_INVALID_STRING = 2,
  OEM_STATUS_INDEX_OUT_OF_RANGE = 3,
  OEM_STATUS_BUFFER_TOO_SMALL = 4,
  OEM_STATUS_DOMAIN = 10,
  OEM_STATUS_DIMENSION = 11,
  OEM_STATUS_OUT_OF_RANGE = 12,
  OEM_STATUS_MESH_ALIGNMENT = 13,
  OEM_STATUS_EVALUATION = 14,
  OEM_STATUS_DIVERGENCE = 15,
  OEM_STATUS_RANK_DEFICIENT = 16,
  OEM_STATUS_FINITE_DIFFERENCE = 17,
  OEM_STATUS_CONFIG = 18,
  OEM_STATUS_PARSE = 19,
  OEM_STATUS_IO = 20,
  OEM_STATUS_PANIC = 99,
} OemStatus;

// Run configuration handle.
typedef struct OemConfig OemConfig;

// Experiment (time grid, outputs, inputs) handle.
typedef struct OemData OemData;

// Estimation result handle.
typedef struct OemReport OemReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if none has
// failed. The pointer stays valid until the next failing call on the same
// thread.
const char *oem_last_error(void);

// Library version as a static NUL-terminated string.
const char *oem_version(void);

// Parses and validates a TOML run configuration.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum OemStatus oem_config_from_toml(const char *text, struct OemConfig **out);

// Reads and validates a TOML run configuration from a file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum OemStatus oem_config_from_file(const char *path, struct OemConfig **out);

// Replaces the transcription (`collocation`, `single-shooting` or
// `multiple-shooting`). The configuration is left unchanged on failure.
//
// # Safety
// `config` must come from `oem_config_from_*`; `kind` must be a
// NUL-terminated string.
enum OemStatus oem_config_set_transcription(struct OemConfig *config, const char *kind);

// Replaces the random seed.
//
// # Safety
// `config` must come from `oem_config_from_*`.
enum OemStatus oem_config_set_seed(struct OemConfig *config, uint64_t seed);

// # Safety
// `config` must come from `oem_config_from_*` or be null.
void oem_config_free(struct OemConfig *config);

// Loads a CSV experiment with the channels named in the configuration.
//
// # Safety
// `config` must be a live handle, `path` a NUL-terminated string and `out`
// a valid pointer.
enum OemStatus oem_data_load_csv(const struct OemConfig *config,
                                 const char *path,
                                 struct OemData **out);

// Generates a synthetic experiment from the `[simulate]` section.
//
// # Safety
// `config` must be a live handle and `out` a valid pointer.
enum OemStatus oem_data_simulate(const struct OemConfig *config,
                                 uint64_t seed,
                                 struct OemData **out);

// Number of samples.
//
// # Safety
// `data` must be a live handle and `out` a valid pointer.
enum OemStatus oem_data_len(const struct OemData *data, size_t *out);

// Writes the experiment as CSV.
//
// # Safety
// `data` must be a live handle and `path` a NUL-terminated string.
enum OemStatus oem_data_write_csv(const struct OemData *data, const char *path);

// # Safety
// `data` must come from `oem_data_*` or be null.
void oem_data_free(struct OemData *data);

// Runs the configured estimation. A solver that stops without converging
// still yields a report with `OEM_STATUS_OK`; check
// [`oem_report_converged`].
//
// # Safety
// `config` and `data` must be live handles and `out` a valid pointer.
enum OemStatus oem_estimate(const struct OemConfig *config,
                            const struct OemData *data,
                            struct OemReport **out);

// Writes 1 to `out` if the solver converged, 0 otherwise.
//
// # Safety
// `report` must be a live handle and `out` a valid pointer.
enum OemStatus oem_report_converged(const struct OemReport *report, int32_t *out);

// Final objective (negative log-likelihood up to a constant).
//
// # Safety
// `report` must be a live handle and `out` a valid pointer.
enum OemStatus oem_report_objective(const struct OemReport *report, double *out);

// Number of SQP iterations taken.
//
// # Safety
// `report` must be a live handle and `out` a valid pointer.
enum OemStatus oem_report_iterations(const struct OemReport *report, size_t *out);

// Number of estimated parameters (model parameters followed by noise
// parameters).
//
// # Safety
// `report` must be a live handle and `out` a valid pointer.
enum OemStatus oem_report_num_params(const struct OemReport *report, size_t *out);

// Estimate and standard error of parameter `index`. The standard error is
// NaN when the covariance could not be formed. Either out pointer may be
// null.
//
// # Safety
// `report` must be a live handle; non-null out pointers must be valid.
enum OemStatus oem_report_param(const struct OemReport *report,
                                size_t index,
                                double *value,
                                double *std_error);

// Copies the name of parameter `index` into `buf` as a NUL-terminated
// string. `needed` (if non-null) receives the required size including the
// terminator; when `capacity` is smaller nothing is copied and
// `OEM_STATUS_BUFFER_TOO_SMALL` is returned.
//
// # Safety
// `report` must be a live handle; `buf` must hold `capacity` bytes (it may
// be null when `capacity` is 0).
enum OemStatus oem_report_param_name(const struct OemReport *report,
                                     size_t index,
                                     char *buf,
                                     size_t capacity,
                                     size_t *needed);

// Writes the result file, trajectory and iteration log into `dir`.
//
// # Safety
// `report` must be a live handle and `dir` a NUL-terminated string.
enum OemStatus oem_report_write(const struct OemReport *report, const char *dir);

// # Safety
// `report` must come from `oem_estimate` or be null.
void oem_report_free(struct OemReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OEMCOLL_H */
