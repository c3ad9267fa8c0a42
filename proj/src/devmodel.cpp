/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "nexume/devmodel.hpp"

#include <algorithm>
#include <sstream>

#include <json.hpp>

#include "nexume/errors.hpp"
#include "nexume/util.hpp"

namespace nexume::devmodel {

namespace {

const struct {
  KernelKind kind;
  const char* name;
} kKindNames[] = {
    {KernelKind::gemm, "gemm"},
    {KernelKind::matvec, "matvec"},
    {KernelKind::hadamard2d, "hadamard2d"},
    {KernelKind::conv1d, "conv1d"},
    {KernelKind::conv2d, "conv2d"},
    {KernelKind::dwsconv2d, "dwsconv2d"},
};

HardwareProfile make_synthetic(const std::string& name, double base_e_nj,
                               double base_t_ns, double ckpt_nj, double restore_nj,
                               std::vector<MemoryLevel> levels) {
  HardwareProfile p;
  p.name = name;
  // Relative kernel cost factors: conv-style kernels pay for the extra
  // addressing, hadamard is a streaming multiply.
  const std::pair<KernelKind, double> factors[] = {
      {KernelKind::gemm, 1.0},   {KernelKind::matvec, 1.1},
      {KernelKind::hadamard2d, 0.9}, {KernelKind::conv1d, 1.0},
      {KernelKind::conv2d, 1.15},    {KernelKind::dwsconv2d, 1.2},
  };
  for (auto [kind, f] : factors) {
    p.e_per_mac_nj[kind] = base_e_nj * f;
    p.t_per_mac_ns[kind] = base_t_ns * f;
  }
  p.e_checkpoint_nj = ckpt_nj;
  p.e_restore_nj = restore_nj;
  p.memory_levels = std::move(levels);
  return p;
}

}  // namespace

const char* kernel_kind_name(KernelKind kind) {
  for (const auto& e : kKindNames) {
    if (e.kind == kind) return e.name;
  }
  return "gemm";
}

KernelKind kernel_kind_from_name(const std::string& name) {
  for (const auto& e : kKindNames) {
    if (name == e.name) return e.kind;
  }
  throw UnknownKernelKind("unknown kernel kind: " + name);
}

double HardwareProfile::e_per_mac(KernelKind kind) const {
  auto it = e_per_mac_nj.find(kind);
  if (it == e_per_mac_nj.end()) {
    throw UnknownKernelKind(std::string("profile `") + name +
                            "` has no e_per_mac for " + kernel_kind_name(kind));
  }
  return it->second;
}

double HardwareProfile::t_per_mac(KernelKind kind) const {
  auto it = t_per_mac_ns.find(kind);
  if (it == t_per_mac_ns.end()) {
    throw UnknownKernelKind(std::string("profile `") + name +
                            "` has no t_per_mac for " + kernel_kind_name(kind));
  }
  return it->second;
}

void HardwareProfile::validate() const {
  for (const auto& [kind, e] : e_per_mac_nj) {
    if (e <= 0) throw ConfigError("e_per_mac must be positive");
  }
  for (const auto& [kind, t] : t_per_mac_ns) {
    if (t <= 0) throw ConfigError("t_per_mac must be positive");
  }
  if (e_checkpoint_nj <= 0 || e_restore_nj <= 0) {
    throw ConfigError("checkpoint/restore energies must be positive");
  }
  for (size_t i = 0; i < memory_levels.size(); ++i) {
    if (memory_levels[i].access_latency_ns <= 0) {
      throw ConfigError("memory level latency must be positive");
    }
    if (i > 0 && memory_levels[i].size_b <= memory_levels[i - 1].size_b) {
      throw ConfigError("memory levels must be ordered by increasing size");
    }
  }
}

double estimate_energy_uj(const HardwareProfile& profile, KernelKind kind,
                          uint64_t l, uint64_t macs_per_iter) {
  double compute_nj = static_cast<double>(l) * static_cast<double>(macs_per_iter) *
                      profile.e_per_mac(kind);
  return (compute_nj + profile.e_checkpoint_nj) / 1000.0;
}

std::vector<SweepPoint> micro_profile(const Sweep& sweep, const HardwareProfile& device) {
  if (sweep.sizes_b.empty() || sweep.strides_b.empty()) {
    throw InvalidArgument("sweep sizes and strides must be non-empty");
  }
  auto latency_for = [&](uint64_t size_b) {
    for (const auto& level : device.memory_levels) {
      if (size_b <= level.size_b) return level.access_latency_ns;
    }
    return device.memory_levels.empty() ? 0.0
                                        : device.memory_levels.back().access_latency_ns;
  };
  std::vector<SweepPoint> out;
  out.reserve(sweep.sizes_b.size() * sweep.strides_b.size());
  for (uint64_t size : sweep.sizes_b) {
    for (uint64_t stride : sweep.strides_b) {
      // At least one access per pass; per-access latency is set by the level
      // containing the working set.
      out.push_back({size, stride, latency_for(size)});
    }
  }
  return out;
}

std::vector<uint64_t> detect_knees(const std::vector<SweepPoint>& points) {
  // Scan one stride's size curve; the model makes every stride identical, so
  // the first stride present is used.
  if (points.empty()) return {};
  uint64_t stride = points.front().stride_b;
  std::vector<SweepPoint> curve;
  for (const auto& p : points) {
    if (p.stride_b == stride) curve.push_back(p);
  }
  std::sort(curve.begin(), curve.end(),
            [](const SweepPoint& a, const SweepPoint& b) { return a.size_b < b.size_b; });
  std::vector<uint64_t> knees;
  for (size_t i = 0; i + 1 < curve.size(); ++i) {
    if (curve[i].latency_ns > 0 && curve[i + 1].latency_ns / curve[i].latency_ns >= 2.0) {
      knees.push_back(curve[i].size_b);
    }
  }
  return knees;
}

HardwareProfile profile_from_sweep(const std::vector<SweepPoint>& points,
                                   const HardwareProfile& base) {
  HardwareProfile rebuilt = base;
  rebuilt.memory_levels.clear();
  if (points.empty()) return rebuilt;
  uint64_t stride = points.front().stride_b;
  std::vector<SweepPoint> curve;
  for (const auto& p : points) {
    if (p.stride_b == stride) curve.push_back(p);
  }
  std::sort(curve.begin(), curve.end(),
            [](const SweepPoint& a, const SweepPoint& b) { return a.size_b < b.size_b; });
  for (size_t i = 0; i + 1 < curve.size(); ++i) {
    if (curve[i].latency_ns > 0 && curve[i + 1].latency_ns / curve[i].latency_ns >= 2.0) {
      rebuilt.memory_levels.push_back({curve[i].size_b, curve[i].latency_ns});
    }
  }
  // Final plateau becomes the backing level.
  rebuilt.memory_levels.push_back({curve.back().size_b, curve.back().latency_ns});
  return rebuilt;
}

std::string sweep_to_csv(const std::vector<SweepPoint>& points) {
  std::ostringstream out;
  out << "size_b,stride_b,latency_ns\n";
  for (const auto& p : points) {
    out << p.size_b << ',' << p.stride_b << ',' << p.latency_ns << '\n';
  }
  return out.str();
}

HardwareProfile parse_profile_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("profile JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("profile JSON must be an object");
  static const char* kAllowed[] = {"name",         "e_per_mac_nj", "t_per_mac_ns",
                                   "e_checkpoint_nj", "e_restore_nj", "memory_levels"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : kAllowed) {
      if (it.key() == k) known = true;
    }
    if (!known) throw ParseError("profile JSON has unknown field `" + it.key() + "`");
  }
  HardwareProfile p;
  try {
    p.name = j.at("name").get<std::string>();
    for (auto it = j.at("e_per_mac_nj").begin(); it != j.at("e_per_mac_nj").end(); ++it) {
      p.e_per_mac_nj[kernel_kind_from_name(it.key())] = it.value().get<double>();
    }
    for (auto it = j.at("t_per_mac_ns").begin(); it != j.at("t_per_mac_ns").end(); ++it) {
      p.t_per_mac_ns[kernel_kind_from_name(it.key())] = it.value().get<double>();
    }
    p.e_checkpoint_nj = j.at("e_checkpoint_nj").get<double>();
    p.e_restore_nj = j.at("e_restore_nj").get<double>();
    for (const auto& lvl : j.at("memory_levels")) {
      p.memory_levels.push_back({lvl.at("size_b").get<uint64_t>(),
                                 lvl.at("access_latency_ns").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("profile JSON: ") + e.what());
  }
  p.validate();
  return p;
}

HardwareProfile load_profile(const std::string& path) {
  return parse_profile_json(read_file(path));
}

std::string profile_to_json(const HardwareProfile& profile) {
  nlohmann::json j;
  j["name"] = profile.name;
  for (const auto& [kind, e] : profile.e_per_mac_nj) {
    j["e_per_mac_nj"][kernel_kind_name(kind)] = e;
  }
  for (const auto& [kind, t] : profile.t_per_mac_ns) {
    j["t_per_mac_ns"][kernel_kind_name(kind)] = t;
  }
  j["e_checkpoint_nj"] = profile.e_checkpoint_nj;
  j["e_restore_nj"] = profile.e_restore_nj;
  j["memory_levels"] = nlohmann::json::array();
  for (const auto& lvl : profile.memory_levels) {
    j["memory_levels"].push_back(
        {{"size_b", lvl.size_b}, {"access_latency_ns", lvl.access_latency_ns}});
  }
  return j.dump(2) + "\n";
}

std::vector<std::string> builtin_profile_names() {
  return {"synth-low", "synth-mid", "synth-high"};
}

HardwareProfile builtin_profile(const std::string& name) {
  if (name == "synth-low") {
    return make_synthetic("synth-low", 8.0, 400.0, 40000.0, 20000.0,
                          {{2048, 15.0}, {8192, 40.0}, {262144, 180.0}});
  }
  if (name == "synth-mid") {
    return make_synthetic("synth-mid", 5.0, 250.0, 30000.0, 15000.0,
                          {{4096, 10.0}, {65536, 100.0}});
  }
  if (name == "synth-high") {
    return make_synthetic("synth-high", 2.0, 80.0, 20000.0, 10000.0,
                          {{16384, 8.0}, {131072, 60.0}, {1048576, 200.0}});
  }
  throw ConfigError("unknown builtin profile: " + name);
}

}  // namespace nexume::devmodel
