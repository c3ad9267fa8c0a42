// Shared builders for the test suites.
#pragma once

#include <vector>

#include "nexume/devmodel.hpp"
#include "nexume/ehsim.hpp"
#include "nexume/intermittent.hpp"
#include "nexume/kernels.hpp"
#include "nexume/rng.hpp"

namespace testsupport {

inline nexume::devmodel::HardwareProfile flat_profile(double e_mac_nj = 5.0,
                                                      double t_mac_ns = 250.0,
                                                      double ckpt_nj = 3000.0,
                                                      double restore_nj = 1500.0) {
  nexume::devmodel::HardwareProfile p;
  p.name = "test-flat";
  for (auto kind : nexume::devmodel::kAllKernelKinds) {
    p.e_per_mac_nj[kind] = e_mac_nj;
    p.t_per_mac_ns[kind] = t_mac_ns;
  }
  p.e_checkpoint_nj = ckpt_nj;
  p.e_restore_nj = restore_nj;
  p.memory_levels = {{4096, 10.0}, {65536, 100.0}};
  return p;
}

inline nexume::kernels::FixedTensor random_fixed(nexume::Rng& rng, size_t rows, size_t cols,
                                                 int bits = 12, double scale = 2.0) {
  nexume::Tensor t({rows, cols});
  for (auto& v : t.data) v = rng.next_uniform(-scale, scale);
  return nexume::kernels::quantize(t, bits, scale);
}

// Energy-rich capacitor so runs only fail where the schedule injects it.
inline nexume::ehsim::CapacitorState big_capacitor() {
  return nexume::ehsim::CapacitorState::from_voltage(1.0, 3.3, 1.8, 3.3);
}

// Splits `extent` into random chunk sizes no larger than max_l.
inline std::vector<uint64_t> random_chunks(nexume::Rng& rng, uint64_t extent, uint64_t max_l) {
  std::vector<uint64_t> chunks;
  uint64_t left = extent;
  while (left > 0) {
    uint64_t l = 1 + rng.next_range(0, std::min(max_l, left) - 1);
    chunks.push_back(l);
    left -= l;
  }
  return chunks;
}

}  // namespace testsupport
