#ifndef LEVYHOM_H
#define LEVYHOM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes. The numeric values of the config, numeric and I/O classes
// match the exit codes of the `levyhom` binary.
typedef enum LhStatus {
  LH_STATUS_OK = 0,
  LH_STATUS_NULL_POINTER = 1,
  LH_STATUS_CONFIG = 2,
  LH_STATUS_NUMERIC = 3,
  LH_STATUS_IO = 4,
  LH_STATUS_OUT_OF_RANGE = 5,
  LH_STATUS_PANIC = 6,
} LhStatus;

// Parsed experiment config.
typedef struct LhConfig LhConfig;

// Effective kernel, with the cell solution when the case has one.
typedef struct LhEffective LhEffective;

// Result of an ε-sweep.
typedef struct LhSweep LhSweep;

// One row of a sweep. Optional fields are NaN when absent.
typedef struct LhSweepRecord {
  double eps;
  uint64_t seed;
  double rel_error;
  double gamma_value;
  double seminorm;
  size_t iterations;
  double residual;
  double wall_ms;
} LhSweepRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL.
//
// The pointer stays valid until the next `lh_` call on the same thread.
const char *lh_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *lh_version(void);

// `Λ^eff` of a periodic product kernel from cell samples of λ and μ.
//
// Both arrays hold `n^dim` values in row-major order.
//
// # Safety
// `lambda` and `mu` must point to `n^dim` readable doubles; `out` must be writable.
enum LhStatus lh_effective_p1(size_t dim,
                              size_t n,
                              const double *lambda,
                              const double *mu,
                              double *out);

// Loads a JSON config; relative paths resolve against its directory.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum LhStatus lh_config_load(const char *path, struct LhConfig **out);

// Parses a JSON config from memory; relative paths resolve against the cwd.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum LhStatus lh_config_parse(const char *json, struct LhConfig **out);

// Replaces the seed list.
//
// # Safety
// `config` must come from `lh_config_load` or `lh_config_parse`;
// `seeds` must point to `len` readable values.
enum LhStatus lh_config_set_seeds(struct LhConfig *config, const uint64_t *seeds, size_t len);

// Checks the kernel and, when a source and ε values are given, the sweep setup.
//
// # Safety
// `config` must be a live handle.
enum LhStatus lh_config_validate(const struct LhConfig *config);

// # Safety
// `config` must be NULL or a handle not yet freed.
void lh_config_free(struct LhConfig *config);

// Computes the effective kernel of the configured model.
//
// # Safety
// `config` must be a live handle; `out` must be writable.
enum LhStatus lh_effective_compute(const struct LhConfig *config, struct LhEffective **out);

// Scale of `Λ^eff`. For modulated kernels the macro factor is not included.
//
// # Safety
// `eff` must be a live handle; `out` must be writable.
enum LhStatus lh_effective_lambda(const struct LhEffective *eff, double *out);

// Copies the invariant density `p₀` into `buf`.
//
// `*len` receives the number of samples. Call with `buf = NULL` to query
// the size; `LH_STATUS_OUT_OF_RANGE` if `cap` is too small. Without a cell
// problem `*len` is 0.
//
// # Safety
// `eff` must be a live handle; `buf` must hold `cap` doubles when non-NULL.
enum LhStatus lh_effective_p0(const struct LhEffective *eff, double *buf, size_t cap, size_t *len);

// # Safety
// `eff` must be NULL or a handle not yet freed.
void lh_effective_free(struct LhEffective *eff);

// Runs the configured ε-sweep.
//
// # Safety
// `config` must be a live handle; `out` must be writable.
enum LhStatus lh_sweep_run(const struct LhConfig *config, struct LhSweep **out);

// Number of (seed, ε) records.
//
// # Safety
// `sweep` must be a live handle; `out` must be writable.
enum LhStatus lh_sweep_len(const struct LhSweep *sweep, size_t *out);

// Record `index`, ordered by seed then by decreasing ε.
//
// # Safety
// `sweep` must be a live handle; `out` must be writable.
enum LhStatus lh_sweep_record(const struct LhSweep *sweep, size_t index, struct LhSweepRecord *out);

// `Λ^eff` scale used by the sweep.
//
// # Safety
// `sweep` must be a live handle; `out` must be writable.
enum LhStatus lh_sweep_lambda_eff(const struct LhSweep *sweep, double *out);

// Fitted log-log rate; NaN with fewer than three ε values.
//
// # Safety
// `sweep` must be a live handle; `out` must be writable.
enum LhStatus lh_sweep_rate(const struct LhSweep *sweep, double *out);

// Writes the sweep as CSV.
//
// # Safety
// `sweep` must be a live handle; `path` must be a NUL-terminated string.
enum LhStatus lh_sweep_write_csv(const struct LhSweep *sweep, const char *path);

// # Safety
// `sweep` must be NULL or a handle not yet freed.
void lh_sweep_free(struct LhSweep *sweep);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LEVYHOM_H */
