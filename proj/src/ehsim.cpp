/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "nexume/ehsim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nexume/errors.hpp"
#include "nexume/rng.hpp"
#include "nexume/util.hpp"

namespace nexume::ehsim {

namespace {

const struct {
  SourceKind kind;
  const char* name;
} kSourceNames[] = {
    {SourceKind::solar_outdoor, "solar_outdoor"},
    {SourceKind::solar_indoor, "solar_indoor"},
    {SourceKind::rf_wifi_home, "rf_wifi_home"},
    {SourceKind::rf_wifi_office, "rf_wifi_office"},
    {SourceKind::thermal, "thermal"},
    {SourceKind::piezo, "piezo"},
    {SourceKind::synthetic, "synthetic"},
};

}  // namespace

const char* source_kind_name(SourceKind kind) {
  for (const auto& e : kSourceNames) {
    if (e.kind == kind) return e.name;
  }
  return "synthetic";
}

SourceKind source_kind_from_name(const std::string& name) {
  for (const auto& e : kSourceNames) {
    if (name == e.name) return e.kind;
  }
  throw ParseError("unknown energy source kind: " + name);
}

double EnergyTrace::duration_s() const {
  if (samples.empty()) return 0.0;
  return (samples.back().t_s - samples.front().t_s) + sample_interval_s;
}

double EnergyTrace::power_at(double t_s) const {
  if (samples.empty()) return 0.0;
  double dur = duration_s();
  double local = std::fmod(t_s, dur);
  if (local < 0) local += dur;
  local += samples.front().t_s;
  // ZOH: power of the latest sample at or before `local`.
  auto it = std::upper_bound(samples.begin(), samples.end(), local,
                             [](double t, const TraceSample& s) { return t < s.t_s; });
  if (it == samples.begin()) return samples.front().power_uw;
  return std::prev(it)->power_uw;
}

double EnergyTrace::energy_uj(double a_s, double b_s) const {
  if (samples.empty() || b_s <= a_s) return 0.0;
  double dur = duration_s();
  // One-cycle integral, then whole cycles plus partial ends.
  auto cycle_integral = [&](double from, double to) {
    // from, to in [0, dur], relative to trace start.
    if (to <= from) return 0.0;
    double total = 0.0;
    double t0 = samples.front().t_s;
    // First segment overlapping `from`, then walk until `to`.
    auto it = std::upper_bound(samples.begin(), samples.end(), from + t0,
                               [](double t, const TraceSample& s) { return t < s.t_s; });
    size_t i = (it == samples.begin()) ? 0 : static_cast<size_t>(it - samples.begin()) - 1;
    for (; i < samples.size(); ++i) {
      double seg_start = samples[i].t_s - t0;
      if (seg_start >= to) break;
      double seg_end = (i + 1 < samples.size()) ? samples[i + 1].t_s - t0 : dur;
      double lo = std::max(from, seg_start);
      double hi = std::min(to, seg_end);
      if (hi > lo) total += samples[i].power_uw * (hi - lo);
    }
    return total;
  };
  double a = std::fmod(a_s, dur);
  if (a < 0) a += dur;
  double span = b_s - a_s;
  double total = 0.0;
  double whole = std::floor(span / dur);
  if (whole > 0) total += whole * cycle_integral(0.0, dur);
  double rest = span - whole * dur;
  double end = a + rest;
  if (end <= dur) {
    total += cycle_integral(a, end);
  } else {
    total += cycle_integral(a, dur);
    total += cycle_integral(0.0, end - dur);
  }
  return total;
}

EnergyTrace parse_trace_csv(const std::string& text, SourceKind kind) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw EmptyTrace("trace file is empty");
  // Tolerate a trailing \r from CRLF files on the header only.
  while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
  if (line != "t_s,power_uW") {
    throw ParseError("trace header must be `t_s,power_uW`, got `" + line + "`");
  }
  EnergyTrace trace;
  trace.source_kind = kind;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty()) continue;
    size_t comma = line.find(',');
    if (comma == std::string::npos) {
      throw ParseError("trace row " + std::to_string(lineno) + " has no comma");
    }
    try {
      size_t used_t = 0, used_p = 0;
      double t = std::stod(line.substr(0, comma), &used_t);
      std::string ptext = line.substr(comma + 1);
      double p = std::stod(ptext, &used_p);
      if (used_t != comma || used_p != ptext.size()) {
        throw ParseError("trace row " + std::to_string(lineno) + " is malformed");
      }
      if (p < 0) throw ParseError("trace row " + std::to_string(lineno) + " has negative power");
      trace.samples.push_back({t, p});
    } catch (const std::invalid_argument&) {
      throw ParseError("trace row " + std::to_string(lineno) + " is malformed");
    } catch (const std::out_of_range&) {
      throw ParseError("trace row " + std::to_string(lineno) + " is out of range");
    }
  }
  if (trace.samples.empty()) throw EmptyTrace("trace has no samples");
  for (size_t i = 1; i < trace.samples.size(); ++i) {
    if (trace.samples[i].t_s <= trace.samples[i - 1].t_s) {
      throw NonMonotonicTime("trace timestamps must be strictly increasing at row " +
                             std::to_string(i + 2));
    }
  }
  if (trace.samples.size() >= 2) {
    trace.sample_interval_s = (trace.samples.back().t_s - trace.samples.front().t_s) /
                              static_cast<double>(trace.samples.size() - 1);
  } else {
    trace.sample_interval_s = 1.0;
  }
  return trace;
}

EnergyTrace load_trace(const std::string& path) {
  return parse_trace_csv(read_file(path));
}

std::string trace_to_csv(const EnergyTrace& trace) {
  std::ostringstream out;
  out << "t_s,power_uW\n";
  out.precision(17);
  for (const auto& s : trace.samples) {
    out << s.t_s << ',' << s.power_uw << '\n';
  }
  return out.str();
}

EnergyTrace make_constant_trace(double power_uw, double duration_s, double interval_s) {
  EnergyTrace t;
  t.source_kind = SourceKind::synthetic;
  t.sample_interval_s = interval_s;
  for (double ts = 0.0; ts < duration_s; ts += interval_s) {
    t.samples.push_back({ts, power_uw});
  }
  if (t.samples.empty()) t.samples.push_back({0.0, power_uw});
  return t;
}

EnergyTrace make_piezo_trace(double peak_uw, double burst_s, double gap_s,
                             double duration_s, double interval_s, uint64_t seed) {
  EnergyTrace t;
  t.source_kind = SourceKind::piezo;
  t.sample_interval_s = interval_s;
  Rng rng(seed);
  double ts = 0.0;
  bool in_burst = true;
  double phase_left = burst_s;
  while (ts < duration_s) {
    double p = 0.0;
    if (in_burst) {
      // Vibration bursts jitter around the peak.
      p = peak_uw * (0.7 + 0.3 * rng.next_double());
    }
    t.samples.push_back({ts, p});
    ts += interval_s;
    phase_left -= interval_s;
    if (phase_left <= 0.0) {
      in_burst = !in_burst;
      double nominal = in_burst ? burst_s : gap_s;
      phase_left = nominal * (0.5 + rng.next_double());
    }
  }
  if (t.samples.empty()) t.samples.push_back({0.0, 0.0});
  return t;
}

CapacitorState CapacitorState::from_voltage(double capacitance_f, double v_now,
                                            double v_min, double v_max,
                                            double efficiency) {
  CapacitorState s;
  s.capacitance_f = capacitance_f;
  s.v_min = v_min;
  s.v_max = v_max;
  s.efficiency = efficiency;
  s.energy_nj = static_cast<int64_t>(
      std::llround(0.5 * capacitance_f * (v_now * v_now - v_min * v_min) * 1e9));
  s.max_energy_nj = static_cast<int64_t>(
      std::llround(0.5 * capacitance_f * (v_max * v_max - v_min * v_min) * 1e9));
  if (s.energy_nj < 0) s.energy_nj = 0;
  if (s.energy_nj > s.max_energy_nj) s.energy_nj = s.max_energy_nj;
  return s;
}

double CapacitorState::v_now() const {
  if (capacitance_f <= 0.0) return v_min;
  double e_j = static_cast<double>(energy_nj) * 1e-9;
  return std::sqrt(v_min * v_min + 2.0 * e_j / capacitance_f);
}

double usable_energy_uj(const CapacitorState& state) {
  return nj_to_uj(state.energy_nj);
}

StepResult step(const CapacitorState& state, const EnergyTrace& trace,
                double t_s, double dt_s, double draw_uj) {
  if (dt_s <= 0.0) throw InvalidArgument("step dt must be positive");
  if (draw_uj < 0.0) throw InvalidArgument("step draw must be non-negative");
  StepResult r;
  r.state = state;

  double income_uj = trace.energy_uj(t_s, t_s + dt_s) * state.efficiency;
  int64_t income_nj = uj_to_nj(income_uj);
  int64_t headroom = state.max_energy_nj - state.energy_nj;
  int64_t credited = std::min(income_nj, headroom);
  if (credited < 0) credited = 0;
  r.state.energy_nj += credited;
  r.harvested_nj = credited;

  int64_t draw_nj = uj_to_nj(draw_uj);
  if (draw_nj <= r.state.energy_nj) {
    r.state.energy_nj -= draw_nj;
    r.debited_nj = draw_nj;
    r.brownout = false;
  } else {
    // Overdraw: the consumer gets nothing useful and the capacitor collapses
    // to the brownout floor.
    r.debited_nj = r.state.energy_nj;
    r.state.energy_nj = 0;
    r.brownout = true;
  }
  return r;
}

}  // namespace nexume::ehsim
