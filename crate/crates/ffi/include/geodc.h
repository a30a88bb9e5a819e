#ifndef GEODC_H
#define GEODC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum GeodcStatus {
  GEODC_STATUS_OK = 0,
  GEODC_STATUS_INFEASIBLE = 1,
  GEODC_STATUS_CONFIG = 2,
  GEODC_STATUS_DOMAIN = 3,
  GEODC_STATUS_NULL_POINTER = 4,
  GEODC_STATUS_INVALID_UTF8 = 5,
  GEODC_STATUS_INTERNAL = 6,
  GEODC_STATUS_PANIC = 7,
} GeodcStatus;

// A validated single-slot scenario.
typedef struct GeodcScenario GeodcScenario;

// Decisions and objective of a solve.
typedef struct GeodcSolution GeodcSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *geodc_last_error(void);

// Library version as a static NUL-terminated string.
const char *geodc_version(void);

// Parses and validates a scenario document.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a writable pointer.
enum GeodcStatus geodc_scenario_load_json(const char *json, struct GeodcScenario **out);

// Releases a scenario. Null is ignored.
//
// # Safety
// `scenario` must come from [`geodc_scenario_load_json`] and not be used
// afterwards.
void geodc_scenario_free(struct GeodcScenario *scenario);

// Number of data centers, or 0 for a null handle.
//
// # Safety
// `scenario` must be null or a live handle.
uintptr_t geodc_scenario_dc_count(const struct GeodcScenario *scenario);

// Solves the continuous relaxation.
//
// # Safety
// `scenario` must be a live handle and `out` writable.
enum GeodcStatus geodc_solve_relaxed(const struct GeodcScenario *scenario,
                                     struct GeodcSolution **out);

// Solves with whole server counts through the rounding heuristic.
//
// # Safety
// `scenario` must be a live handle and `out` writable.
enum GeodcStatus geodc_solve_heuristic(const struct GeodcScenario *scenario,
                                       struct GeodcSolution **out);

// # Safety
// `solution` must be a live handle and `out` writable.
enum GeodcStatus geodc_solution_objective(const struct GeodcSolution *solution, double *out);

// Arrival rate, active servers and battery action of data center `dc`.
// Any output pointer may be null.
//
// # Safety
// `solution` must be a live handle; non-null outputs must be writable.
enum GeodcStatus geodc_solution_decision(const struct GeodcSolution *solution,
                                         uintptr_t dc,
                                         double *out_arrival_rate,
                                         double *out_active_servers,
                                         double *out_battery_delta_kwh);

// The full solution as JSON. Release the string with [`geodc_string_free`].
//
// # Safety
// `solution` must be a live handle and `out` writable.
enum GeodcStatus geodc_solution_to_json(const struct GeodcSolution *solution, char **out);

// # Safety
// `solution` must be null or come from a solve call, and not be used
// afterwards.
void geodc_solution_free(struct GeodcSolution *solution);

// # Safety
// `s` must be null or a string returned by this library.
void geodc_string_free(char *s);

// Cheapest split of `demand` kWh over `n` sources with the given prices and
// quadratic coefficients. Writes `n` purchases to `out_q`; the cost and
// marginal cost outputs may be null.
//
// # Safety
// `prices` and `pif_coeffs` must point to `n` readable values and `out_q`
// to `n` writable values.
enum GeodcStatus geodc_allocate(const double *prices,
                                const double *pif_coeffs,
                                uintptr_t n,
                                double demand,
                                double *out_q,
                                double *out_cost,
                                double *out_marginal);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GEODC_H */
