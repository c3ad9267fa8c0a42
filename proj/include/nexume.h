/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 *
 * C API for the nexume intermittent-execution simulator and training
 * library. All objects are opaque handles; every function returns a status
 * code and leaves a human-readable message in nex_last_error() on failure.
 */
#ifndef NEXUME_H
#define NEXUME_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define NEXUME_API __declspec(dllexport)
#else
#define NEXUME_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum nex_status {
  NEX_OK = 0,
  NEX_ERR_INVALID = 1,    /* bad arguments / failed validation */
  NEX_ERR_PARSE = 2,      /* malformed input file */
  NEX_ERR_IO = 3,         /* missing or unwritable file */
  NEX_ERR_INFEASIBLE = 4, /* energy budget cannot fit one iteration */
  NEX_ERR_STARVATION = 5, /* simulated energy never recovered */
  NEX_ERR_NONFINITE = 6,  /* loss or gradient diverged */
  NEX_ERR_RUNTIME = 7     /* any other runtime failure */
} nex_status;

typedef struct nex_trace nex_trace;
typedef struct nex_profile nex_profile;
typedef struct nex_model nex_model;

NEXUME_API const char* nex_version(void);

/* Thread-local message for the most recent failing call. */
NEXUME_API const char* nex_last_error(void);

/* --- energy traces (CSV: header `t_s,power_uW`) --- */
NEXUME_API nex_status nex_trace_load(const char* path, nex_trace** out);
NEXUME_API void nex_trace_free(nex_trace* trace);
NEXUME_API nex_status nex_trace_sample_count(const nex_trace* trace, size_t* out);

/* --- hardware profiles (JSON file or builtin name) --- */
NEXUME_API nex_status nex_profile_load(const char* path, nex_profile** out);
NEXUME_API nex_status nex_profile_builtin(const char* name, nex_profile** out);
NEXUME_API void nex_profile_free(nex_profile* profile);

/* Micro-profiling sweep table as CSV (size_b,stride_b,latency_ns). Writes to
 * out_path, or to stdout when out_path is NULL. options_json may override
 * {"sizes_b":[...],"strides_b":[...]}; pass NULL for defaults. */
NEXUME_API nex_status nex_profile_sweep_csv(const nex_profile* profile,
                                            const char* options_json,
                                            const char* out_path);

/* --- models --- */
NEXUME_API nex_status nex_model_load(const char* path, nex_model** out);
NEXUME_API void nex_model_free(nex_model* model);

/* --- experiments ---
 * Each takes a JSON config file plus an optional JSON override string
 * (flag-style overrides win over the file). Outputs are written atomically.
 */
NEXUME_API nex_status nex_train(const char* config_path, const char* overrides_json,
                                const char* out_model_path);

NEXUME_API nex_status nex_simulate(const nex_trace* trace, const nex_profile* profile,
                                   const nex_model* model, double slo_ms, uint64_t seed,
                                   const char* options_json, const char* out_report_path);

NEXUME_API nex_status nex_search(const char* config_path, const char* overrides_json,
                                 const char* out_csv_path);

/* Aggregates per-inference report JSONs into one summary JSON. */
NEXUME_API nex_status nex_report_merge(const char* const* report_paths, size_t count,
                                       const char* out_path);

#ifdef __cplusplus
}
#endif

#endif /* NEXUME_H */
