/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace nexume::ehsim {

enum class SourceKind {
  solar_outdoor,
  solar_indoor,
  rf_wifi_home,
  rf_wifi_office,
  thermal,
  piezo,
  synthetic,
};

const char* source_kind_name(SourceKind kind);
SourceKind source_kind_from_name(const std::string& name);

struct TraceSample {
  double t_s;
  double power_uw;
};

// Harvested power over time. Zero-order hold between samples; replay is
// cyclic past the end, so a bursty trace stays bursty for arbitrarily long
// simulations.
struct EnergyTrace {
  SourceKind source_kind = SourceKind::synthetic;
  std::vector<TraceSample> samples;
  double sample_interval_s = 1.0;

  double duration_s() const;
  // Instantaneous power at absolute simulation time t (cyclic).
  double power_at(double t_s) const;
  // Exact piecewise integral of power over [a, b), in microjoules.
  double energy_uj(double a_s, double b_s) const;
};

// CSV with header `t_s,power_uW`, one sample per row.
EnergyTrace load_trace(const std::string& path);
EnergyTrace parse_trace_csv(const std::string& text, SourceKind kind = SourceKind::synthetic);
std::string trace_to_csv(const EnergyTrace& trace);

// Deterministic synthetic traces for experiments. `piezo` produces bursts of
// high power separated by quiet gaps; `constant` holds power_uw throughout.
EnergyTrace make_constant_trace(double power_uw, double duration_s, double interval_s);
EnergyTrace make_piezo_trace(double peak_uw, double burst_s, double gap_s,
                             double duration_s, double interval_s, uint64_t seed);

// Storage state. The usable-energy ledger is kept in integer nanojoules so
// conservation is exactly assertable; volt conversions happen only at the
// boundaries (construction and v_now()).
struct CapacitorState {
  double capacitance_f = 100e-6;
  double v_min = 1.8;
  double v_max = 3.3;
  double efficiency = 1.0;  // harvest conversion efficiency, (0,1]
  int64_t energy_nj = 0;    // usable energy above v_min
  int64_t max_energy_nj = 0;

  static CapacitorState from_voltage(double capacitance_f, double v_now,
                                     double v_min, double v_max,
                                     double efficiency = 1.0);
  double v_now() const;
  bool operator==(const CapacitorState&) const = default;
};

// Usable stored energy in microjoules: 0.5*C*(v_now^2 - v_min^2).
double usable_energy_uj(const CapacitorState& state);

struct StepResult {
  CapacitorState state;
  bool brownout = false;
  int64_t harvested_nj = 0;  // credited after the v_max clamp
  int64_t debited_nj = 0;    // what actually left the capacitor
};

// Advances the capacitor by dt: credits harvested energy (exact piecewise
// integral, ZOH), then attempts the draw. A draw exceeding the available
// energy delivers nothing useful: the ledger floors at zero, v_now drops to
// v_min and brownout is flagged.
StepResult step(const CapacitorState& state, const EnergyTrace& trace,
                double t_s, double dt_s, double draw_uj);

inline int64_t uj_to_nj(double uj) {
  return static_cast<int64_t>(std::llround(uj * 1000.0));
}
inline double nj_to_uj(int64_t nj) { return static_cast<double>(nj) / 1000.0; }

}  // namespace nexume::ehsim
