/* C interface to the inflab pipelines. Generated by cbindgen; do not edit. */

#ifndef INFLAB_H
#define INFLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status of an interface call. The first four values mirror the pipeline
// exit codes; the rest report misuse of the interface itself.
typedef enum InflabStatus {
  // Run completed; all enabled checks passed.
  INFLAB_STATUS_OK = 0,
  // Run completed but checks recorded violations (see the report).
  INFLAB_STATUS_VIOLATIONS = 1,
  // Iteration missed its convergence gate; results are partial.
  INFLAB_STATUS_NOT_CONVERGED = 2,
  // The configuration is invalid; `inflab_last_error` has the details.
  INFLAB_STATUS_CONFIG_ERROR = 3,
  // A required pointer argument was NULL.
  INFLAB_STATUS_NULL_ARGUMENT = 4,
  // A string argument was not valid UTF-8.
  INFLAB_STATUS_INVALID_UTF8 = 5,
  // An internal invariant failed; `inflab_last_error` has the details.
  INFLAB_STATUS_INTERNAL = 6,
} InflabStatus;

// One executed run: the report document plus the solved field.
typedef struct InflabRun InflabRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Parses `config_toml` and executes the configured solve pipeline (bounded
// or exterior, decided by the presence of a `[farfield]` table).
//
// Whenever a report exists — including failed runs — `*out` receives a
// handle the caller must free with [`inflab_run_free`]; the return value is
// the run's exit status. On parse failures `*out` stays NULL.
//
// # Safety
// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
enum InflabStatus inflab_run_config(const char *config_toml, struct InflabRun **out);

// Like [`inflab_run_config`], but runs the h-refinement sweep; the
// configuration needs `sweep_h` and a closed-form `reference`.
//
// # Safety
// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
enum InflabStatus inflab_sweep_config(const char *config_toml, struct InflabRun **out);

// The run's exit code (0 clean, 1 violations, 2 not converged, 3 config
// error), or -1 for a NULL handle.
//
// # Safety
// `run` must be NULL or a live handle from this interface.
int32_t inflab_run_exit_code(const struct InflabRun *run);

// The full report as NUL-terminated TOML, owned by the handle (valid until
// [`inflab_run_free`]). NULL for a NULL handle.
//
// # Safety
// `run` must be NULL or a live handle from this interface.
const char *inflab_run_report(const struct InflabRun *run);

// The classification verdict (`bounded`, `cone_up`, `cone_down`, `plane`,
// or `inconclusive`), an empty string when the run has no classification,
// or NULL for a NULL handle. Owned by the handle.
//
// # Safety
// `run` must be NULL or a live handle from this interface.
const char *inflab_run_regime(const struct InflabRun *run);

// Number of lattice nodes in the solved field (0 when the run produced no
// field, e.g. sweeps and early failures).
//
// # Safety
// `run` must be NULL or a live handle from this interface.
size_t inflab_run_node_count(const struct InflabRun *run);

// Copies up to `cap` node values into `buf` in lattice order (excluded
// nodes hold NaN) and returns the count copied.
//
// # Safety
// `run` must be NULL or a live handle; `buf` must point to at least `cap`
// writable doubles.
size_t inflab_run_values(const struct InflabRun *run, double *buf, size_t cap);

// Detailed message for the current thread's most recent failure, or NULL.
// Valid until the next interface call on this thread.
const char *inflab_last_error(void);

// Frees a run handle. NULL is a no-op.
//
// # Safety
// `run` must be NULL or a live handle, and must not be used afterwards.
void inflab_run_free(struct InflabRun *run);

// The library version as a static NUL-terminated string.
const char *inflab_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INFLAB_H */
