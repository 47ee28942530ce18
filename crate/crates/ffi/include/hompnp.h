#ifndef HOMPNP_H
#define HOMPNP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HompnpStatus {
  HOMPNP_STATUS_OK = 0,
  HOMPNP_STATUS_NULL_POINTER = 1,
  HOMPNP_STATUS_INVALID_UTF8 = 2,
  HOMPNP_STATUS_CONFIG = 3,
  HOMPNP_STATUS_GEOMETRY = 4,
  HOMPNP_STATUS_INCOMPATIBLE = 5,
  HOMPNP_STATUS_SOLVER = 6,
  // The run stopped early; the run handle still holds the partial results.
  HOMPNP_STATUS_RUN_FAILED = 7,
  HOMPNP_STATUS_IO = 8,
  HOMPNP_STATUS_OUT_OF_RANGE = 9,
  HOMPNP_STATUS_BUFFER_TOO_SMALL = 10,
  HOMPNP_STATUS_DOMAIN = 11,
  HOMPNP_STATUS_PANIC = 99,
} HompnpStatus;

// Validated configuration.
typedef struct HompnpConfig HompnpConfig;

// Time series and final state of one run.
typedef struct HompnpRun HompnpRun;

// Effective tensor of a configuration's unit cell.
typedef struct HompnpTensor HompnpTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *hompnp_version(void);

// Copies the calling thread's last error message (truncated to fit, always
// NUL-terminated when `len > 0`) and returns its full size including the NUL.
// `buf` is null or valid for `len` bytes.
size_t hompnp_last_error_message(char *buf, size_t len);

// Parses and validates a JSON configuration document.
// `json` is a NUL-terminated string; `out` is valid for writes.
enum HompnpStatus hompnp_config_parse(const char *json, struct HompnpConfig **out);

// `cfg` is null or a handle from `hompnp_config_parse` not yet freed.
void hompnp_config_free(struct HompnpConfig *cfg);

// Constant added to the outer surface charge to balance the data.
// `cfg` is a live handle; `out` is valid for writes.
enum HompnpStatus hompnp_config_balance_shift(const struct HompnpConfig *cfg, double *out);

// Solves the cell problems of the configured inclusion.
// `cfg` is a live handle; `out` is valid for writes.
enum HompnpStatus hompnp_cell_tensor(const struct HompnpConfig *cfg, struct HompnpTensor **out);

// Entry `(i, j)` of the mean-flux tensor.
// `t` is a live handle; `out` is valid for writes.
enum HompnpStatus hompnp_tensor_get(const struct HompnpTensor *t, size_t i, size_t j, double *out);

// `t` is a live handle; `dim` and `porosity` are valid for writes.
enum HompnpStatus hompnp_tensor_info(const struct HompnpTensor *t, size_t *dim, double *porosity);

// `t` is null or a live handle.
void hompnp_tensor_free(struct HompnpTensor *t);

// Runs the micro model on the configured perforated grid. On
// `HOMPNP_STATUS_RUN_FAILED` the handle is still set and holds the partial run.
// `cfg` is a live handle; `out` is valid for writes.
enum HompnpStatus hompnp_run_micro(const struct HompnpConfig *cfg, struct HompnpRun **out);

// Runs the homogenized model; see `hompnp_run_micro` for failure handling.
// `cfg` is a live handle; `out` is valid for writes.
enum HompnpStatus hompnp_run_macro(const struct HompnpConfig *cfg, struct HompnpRun **out);

// Number of recorded output times, species and fluid cells.
// `run` is a live handle; the out-pointers are valid for writes.
enum HompnpStatus hompnp_run_shape(const struct HompnpRun *run,
                                   size_t *samples,
                                   size_t *species,
                                   size_t *cells);

// Time, energy and mass of `species` at output `k`.
// `run` is a live handle; the out-pointers are valid for writes.
enum HompnpStatus hompnp_run_sample(const struct HompnpRun *run,
                                    size_t k,
                                    size_t species,
                                    double *t,
                                    double *energy,
                                    double *mass);

// Copies the final concentration of `species` (fluid cells in grid order).
// `run` is a live handle; `buf` is valid for `len` doubles.
enum HompnpStatus hompnp_run_final_concentration(const struct HompnpRun *run,
                                                 size_t species,
                                                 double *buf,
                                                 size_t len);

// Copies the final potential (fluid cells in grid order).
// `run` is a live handle; `buf` is valid for `len` doubles.
enum HompnpStatus hompnp_run_final_potential(const struct HompnpRun *run, double *buf, size_t len);

// The diagnostics time series as CSV text (same layout as the CLI writes).
// `run` is a live handle; `buf` is null or valid for `len` bytes; `needed`
// is null or valid for writes.
enum HompnpStatus hompnp_run_diagnostics_csv(const struct HompnpRun *run,
                                             char *buf,
                                             size_t len,
                                             size_t *needed);

// `run` is null or a live handle.
void hompnp_run_free(struct HompnpRun *run);

// `h_p(r) = r + eta r^p` for `r >= 0`, `eta > 0`, `p >= 4`.
// `out` is valid for writes.
enum HompnpStatus hompnp_h_p(double r, double eta, double p, double *out);

// Entropy density `Psi(r) = r ln r - r + 1 + eta/(p-1) r^p`.
// `out` is valid for writes.
enum HompnpStatus hompnp_psi(double r, double eta, double p, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOMPNP_H */
