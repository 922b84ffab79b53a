#ifndef SMVIRT_H
#define SMVIRT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SmvPolicy {
  SMV_POLICY_BASELINE = 0,
  SMV_POLICY_WLM = 1,
  SMV_POLICY_ZORUA = 2,
} SmvPolicy;

typedef enum SmvStatus {
  SMV_STATUS_OK = 0,
  SMV_STATUS_NULL_ARGUMENT = 1,
  SMV_STATUS_INVALID_ARGUMENT = 2,
  SMV_STATUS_PARSE = 3,
  SMV_STATUS_UNSCHEDULABLE = 4,
  SMV_STATUS_STALLED = 5,
  SMV_STATUS_IO = 6,
  SMV_STATUS_PANIC = 7,
} SmvStatus;

// Opaque GPU configuration.
typedef struct SmvGpu SmvGpu;

// Opaque workload: a kernel plus its launch configuration.
typedef struct SmvWorkload SmvWorkload;

// Coordinator tuning for [`SmvPolicy::Zorua`].
typedef struct SmvCoordinatorParams {
  double u_target;
  double s_max;
  double step;
  double o_max;
  uint64_t epoch_cycles;
  bool swap_budget;
} SmvCoordinatorParams;

typedef struct SmvSimResult {
  uint64_t total_cycles;
  uint64_t instructions_issued;
  double issue_util;
  uint64_t swap_stall_cycles;
  uint32_t peak_resident_warps;
} SmvSimResult;

typedef struct SmvBoxStats {
  double min;
  double q1;
  double median;
  double q3;
  double max;
  double mean;
  double whisker_low;
  double whisker_high;
  size_t outlier_count;
} SmvBoxStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *smv_last_error(void);

// Library version as a static string.
const char *smv_version(void);

// # Safety
// `out` must be valid for writes.
enum SmvStatus smv_coordinator_defaults(struct SmvCoordinatorParams *out);

// Looks up a preset (`gen-a`, `gen-b`, `gen-c`).
//
// # Safety
// `name` must be a nul-terminated string; `out` must be valid for writes.
enum SmvStatus smv_gpu_preset(const char *name, struct SmvGpu **out);

// # Safety
// `gpu` must come from [`smv_gpu_preset`] and not be freed twice. Null is ignored.
void smv_gpu_free(struct SmvGpu *gpu);

// Parses a workload file's contents.
//
// # Safety
// `source` must be a nul-terminated string; `out` must be valid for writes.
enum SmvStatus smv_workload_parse(const char *source, struct SmvWorkload **out);

// Relaunches the workload at another block size with the declared
// (worst-case) resource demands.
//
// # Safety
// `workload` must be a live handle.
enum SmvStatus smv_workload_set_block_size(struct SmvWorkload *workload,
                                           uint32_t threads_per_block);

// # Safety
// `workload` must come from [`smv_workload_parse`] and not be freed twice. Null is ignored.
void smv_workload_free(struct SmvWorkload *workload);

// Blocks of the workload that fit on the SM at once under
// static allocation.
//
// # Safety
// Handles must be live; `out` must be valid for writes.
enum SmvStatus smv_max_resident_blocks(const struct SmvWorkload *workload,
                                       const struct SmvGpu *gpu,
                                       uint32_t *out);

// Simulates the workload. `params` is only read for Zorua; null selects the
// defaults.
//
// # Safety
// Handles must be live; `params` null or readable; `out` valid for writes.
enum SmvStatus smv_simulate(const struct SmvWorkload *workload,
                            const struct SmvGpu *gpu,
                            enum SmvPolicy policy,
                            const struct SmvCoordinatorParams *params,
                            struct SmvSimResult *out);

// Tukey box statistics of `n` samples.
//
// # Safety
// `samples` must hold `n` readable values; `out` must be valid for writes.
enum SmvStatus smv_tukey_stats(const double *samples, size_t n, struct SmvBoxStats *out);

// `1 - min / max` over the cycle counts of a sweep.
//
// # Safety
// `cycles` must hold `n` readable values; `out` must be valid for writes.
enum SmvStatus smv_performance_range(const uint64_t *cycles, size_t n, double *out);

// Porting loss between two sweeps whose `i`-th entries are the same launch
// configuration.
//
// # Safety
// Both arrays must hold `n` readable values; `out` must be valid for writes.
enum SmvStatus smv_porting_loss(const uint64_t *source,
                                const uint64_t *target,
                                size_t n,
                                double margin,
                                double *out);

// Runs the sweep described by a config file and writes `results.csv` and
// `summary.json`. A null `out_dir` keeps the config's directory; zero
// `parallelism` keeps the config's worker count. `rows`, when not null,
// receives the number of simulations.
//
// # Safety
// Strings must be nul-terminated or (for `out_dir`) null; `rows` null or writable.
enum SmvStatus smv_run_sweep(const char *config_path,
                             const char *out_dir,
                             size_t parallelism,
                             size_t *rows);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SMVIRT_H */
