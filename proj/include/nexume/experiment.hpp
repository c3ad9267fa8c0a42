/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "nexume/devmodel.hpp"
#include "nexume/dynfit.hpp"
#include "nexume/ehsim.hpp"
#include "nexume/scheduler.hpp"

namespace nexume::experiment {

// Profile from a builtin name or a JSON file path.
devmodel::HardwareProfile resolve_profile(const std::string& name_or_path);

// Dataset from a JSON spec: {"kind":"fourclass","n":256,"seed":7} or
// {"kind":"csv","path":"...","classes":4} (input shape supplied by caller).
dynfit::Dataset resolve_dataset(const std::string& spec_json,
                                const std::vector<size_t>& input_shape);

// Capacitor from JSON ({"capacitance_f":..,"v_now":..,"v_min":..,"v_max":..,
// "efficiency":..}); missing fields use the defaults.
ehsim::CapacitorState capacitor_from_json(const std::string& json_or_empty);

struct TrainOutcome {
  dynfit::ModelFile model;
  double final_loss = 0.0;
  size_t steps = 0;
};

// Runs the full training config (policy, quantization penalty, optional
// fine-tune) and returns the trained model. `config_json` is the file
// content; `overrides_json` wins key-by-key.
TrainOutcome run_train(const std::string& config_json, const std::string& overrides_json);

// One scheduled inference on a sample drawn from the options' data spec.
scheduler::InferenceResult run_simulate(const ehsim::EnergyTrace& trace,
                                        const devmodel::HardwareProfile& profile,
                                        const dynfit::ModelFile& model, double slo_ms,
                                        uint64_t seed, const std::string& options_json);

// Enumerate + filter + train ranking; returns the report CSV.
std::string run_search(const std::string& config_json, const std::string& overrides_json);

// Aggregate per-inference reports into a summary JSON.
std::string merge_reports(const std::vector<std::string>& report_paths);

}  // namespace nexume::experiment
