/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace nexume::devmodel {

enum class KernelKind {
  gemm,
  matvec,
  hadamard2d,
  conv1d,
  conv2d,
  dwsconv2d,
};

constexpr KernelKind kAllKernelKinds[] = {
    KernelKind::gemm,       KernelKind::matvec, KernelKind::hadamard2d,
    KernelKind::conv1d,     KernelKind::conv2d, KernelKind::dwsconv2d,
};

const char* kernel_kind_name(KernelKind kind);
KernelKind kernel_kind_from_name(const std::string& name);

struct MemoryLevel {
  uint64_t size_b;
  double access_latency_ns;
};

// Per-device energy/timing constants. The shipped profiles are synthetic
// stand-ins shaped like small MCU-class parts; they are not measurements.
struct HardwareProfile {
  std::string name;
  std::map<KernelKind, double> e_per_mac_nj;
  std::map<KernelKind, double> t_per_mac_ns;
  double e_checkpoint_nj = 0.0;
  double e_restore_nj = 0.0;
  std::vector<MemoryLevel> memory_levels;

  double e_per_mac(KernelKind kind) const;
  double t_per_mac(KernelKind kind) const;
  void validate() const;
};

// Energy for one quanta of `l` iterations at `macs_per_iter` MACs each,
// including the trailing checkpoint write. Microjoules.
double estimate_energy_uj(const HardwareProfile& profile, KernelKind kind,
                          uint64_t l, uint64_t macs_per_iter);

struct SweepPoint {
  uint64_t size_b;
  uint64_t stride_b;
  double latency_ns;  // per access
};

struct Sweep {
  std::vector<uint64_t> sizes_b;
  std::vector<uint64_t> strides_b;
};

// Simulated size-and-stride sweep over the profile's memory hierarchy. The
// per-access latency is that of the smallest level holding the working set,
// so latency jumps at each level boundary.
std::vector<SweepPoint> micro_profile(const Sweep& sweep, const HardwareProfile& device);

// Level sizes recovered from a sweep table: the last size before each
// latency jump of ratio >= 2 between consecutive sweep points.
std::vector<uint64_t> detect_knees(const std::vector<SweepPoint>& points);

// Rebuilds a memory hierarchy from a sweep table (knees + plateau
// latencies); the other profile fields are copied from `base`.
HardwareProfile profile_from_sweep(const std::vector<SweepPoint>& points,
                                   const HardwareProfile& base);

std::string sweep_to_csv(const std::vector<SweepPoint>& points);

// JSON profile file; unknown fields are rejected.
HardwareProfile load_profile(const std::string& path);
HardwareProfile parse_profile_json(const std::string& text);
std::string profile_to_json(const HardwareProfile& profile);

std::vector<std::string> builtin_profile_names();
HardwareProfile builtin_profile(const std::string& name);

}  // namespace nexume::devmodel
