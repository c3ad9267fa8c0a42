/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "nexume.h"

#include <cstdio>
#include <string>

#include <json.hpp>

#include "nexume/devmodel.hpp"
#include "nexume/dynfit.hpp"
#include "nexume/ehsim.hpp"
#include "nexume/errors.hpp"
#include "nexume/experiment.hpp"
#include "nexume/scheduler.hpp"
#include "nexume/util.hpp"

using nexume::Error;
using nexume::ErrorCode;

struct nex_trace {
  nexume::ehsim::EnergyTrace trace;
};

struct nex_profile {
  nexume::devmodel::HardwareProfile profile;
};

struct nex_model {
  nexume::dynfit::ModelFile model;
};

namespace {

thread_local std::string g_last_error;

nex_status status_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::parse_error:
    case ErrorCode::empty_trace:
    case ErrorCode::non_monotonic_time:
      return NEX_ERR_PARSE;
    case ErrorCode::io_error:
      return NEX_ERR_IO;
    case ErrorCode::infeasible_budget:
      return NEX_ERR_INFEASIBLE;
    case ErrorCode::starvation:
      return NEX_ERR_STARVATION;
    case ErrorCode::non_finite_loss:
    case ErrorCode::non_finite_gradient:
    case ErrorCode::non_finite_hessian:
      return NEX_ERR_NONFINITE;
    case ErrorCode::invalid_argument:
    case ErrorCode::config_error:
    case ErrorCode::shape_mismatch:
    case ErrorCode::invalid_bit_width:
    case ErrorCode::non_positive_scale:
    case ErrorCode::unknown_kernel_kind:
    case ErrorCode::zero_iterations:
    case ErrorCode::empty_space:
      return NEX_ERR_INVALID;
    default:
      return NEX_ERR_RUNTIME;
  }
}

template <typename Fn>
nex_status guarded(Fn&& fn) {
  try {
    fn();
    return NEX_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return NEX_ERR_RUNTIME;
  } catch (...) {
    g_last_error = "unknown error";
    return NEX_ERR_RUNTIME;
  }
}

nex_status invalid(const char* message) {
  g_last_error = message;
  return NEX_ERR_INVALID;
}

}  // namespace

extern "C" {

const char* nex_version(void) { return "0.1.0"; }

const char* nex_last_error(void) { return g_last_error.c_str(); }

nex_status nex_trace_load(const char* path, nex_trace** out) {
  if (!path || !out) return invalid("path and out must be non-null");
  return guarded([&] {
    auto trace = nexume::ehsim::load_trace(path);
    *out = new nex_trace{std::move(trace)};
  });
}

void nex_trace_free(nex_trace* trace) { delete trace; }

nex_status nex_trace_sample_count(const nex_trace* trace, size_t* out) {
  if (!trace || !out) return invalid("trace and out must be non-null");
  *out = trace->trace.samples.size();
  return NEX_OK;
}

nex_status nex_profile_load(const char* path, nex_profile** out) {
  if (!path || !out) return invalid("path and out must be non-null");
  return guarded([&] {
    auto profile = nexume::devmodel::load_profile(path);
    *out = new nex_profile{std::move(profile)};
  });
}

nex_status nex_profile_builtin(const char* name, nex_profile** out) {
  if (!name || !out) return invalid("name and out must be non-null");
  return guarded([&] {
    auto profile = nexume::devmodel::builtin_profile(name);
    *out = new nex_profile{std::move(profile)};
  });
}

void nex_profile_free(nex_profile* profile) { delete profile; }

nex_status nex_profile_sweep_csv(const nex_profile* profile, const char* options_json,
                                 const char* out_path) {
  if (!profile) return invalid("profile must be non-null");
  return guarded([&] {
    nexume::devmodel::Sweep sweep;
    for (uint64_t size = 512; size <= (1u << 20); size *= 2) sweep.sizes_b.push_back(size);
    sweep.strides_b = {8, 64};
    if (options_json && options_json[0]) {
      auto j = nlohmann::json::parse(options_json);
      if (j.contains("sizes_b")) sweep.sizes_b = j.at("sizes_b").get<std::vector<uint64_t>>();
      if (j.contains("strides_b")) {
        sweep.strides_b = j.at("strides_b").get<std::vector<uint64_t>>();
      }
    }
    auto points = nexume::devmodel::micro_profile(sweep, profile->profile);
    std::string csv = nexume::devmodel::sweep_to_csv(points);
    if (out_path && out_path[0]) {
      nexume::atomic_write_file(out_path, csv);
    } else {
      std::fwrite(csv.data(), 1, csv.size(), stdout);
    }
  });
}

nex_status nex_model_load(const char* path, nex_model** out) {
  if (!path || !out) return invalid("path and out must be non-null");
  return guarded([&] {
    auto model = nexume::dynfit::load_model(path);
    *out = new nex_model{std::move(model)};
  });
}

void nex_model_free(nex_model* model) { delete model; }

nex_status nex_train(const char* config_path, const char* overrides_json,
                     const char* out_model_path) {
  if (!config_path || !out_model_path) {
    return invalid("config path and output path must be non-null");
  }
  return guarded([&] {
    std::string config = nexume::read_file(config_path);
    auto outcome = nexume::experiment::run_train(
        config, overrides_json ? overrides_json : "");
    nexume::dynfit::save_model(outcome.model, out_model_path);
  });
}

nex_status nex_simulate(const nex_trace* trace, const nex_profile* profile,
                        const nex_model* model, double slo_ms, uint64_t seed,
                        const char* options_json, const char* out_report_path) {
  if (!trace || !profile || !model || !out_report_path) {
    return invalid("trace, profile, model and output path must be non-null");
  }
  return guarded([&] {
    auto result = nexume::experiment::run_simulate(
        trace->trace, profile->profile, model->model, slo_ms, seed,
        options_json ? options_json : "");
    nexume::atomic_write_file(out_report_path, nexume::scheduler::report_to_json(result));
  });
}

nex_status nex_search(const char* config_path, const char* overrides_json,
                      const char* out_csv_path) {
  if (!config_path || !out_csv_path) {
    return invalid("config path and output path must be non-null");
  }
  return guarded([&] {
    std::string config = nexume::read_file(config_path);
    std::string csv = nexume::experiment::run_search(
        config, overrides_json ? overrides_json : "");
    nexume::atomic_write_file(out_csv_path, csv);
  });
}

nex_status nex_report_merge(const char* const* report_paths, size_t count,
                            const char* out_path) {
  if (!report_paths || count == 0 || !out_path) {
    return invalid("need at least one report and an output path");
  }
  return guarded([&] {
    std::vector<std::string> paths(report_paths, report_paths + count);
    nexume::atomic_write_file(out_path, nexume::experiment::merge_reports(paths));
  });
}

}  // extern "C"
