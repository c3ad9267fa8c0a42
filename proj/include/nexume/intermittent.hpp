/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <variant>
#include <vector>

#include "nexume/devmodel.hpp"
#include "nexume/ehsim.hpp"
#include "nexume/kernels.hpp"

namespace nexume::intermittent {

// One uninterruptible unit of loop work: l iterations starting at a loop
// cursor, with its planned energy (compute plus the checkpoint write).
struct Quanta {
  devmodel::KernelKind kernel = devmodel::KernelKind::gemm;
  uint64_t start_iter = 0;
  uint32_t outer = 0;
  uint32_t inner = 0;
  uint64_t l = 1;
  double e_uj = 0.0;
};

struct QuantaPlan {
  std::vector<Quanta> quanta;
  double budget_uj = 0.0;  // E_b
  double e_ckpt_uj = 0.0;
  double e_iter_uj = 0.0;

  uint64_t total_iterations() const;
  void validate() const;
};

// Largest l with l*e_iter + e_ckpt <= budget, capped at extent. Throws
// InfeasibleBudget when even one iteration does not fit.
uint64_t optimize_quanta(uint64_t extent, double e_iter_uj, double e_ckpt_uj,
                         double budget_uj);

// Tiles [0, extent) into quanta of the optimal size. inner_width maps the
// flat iteration index onto (outer, inner) loop cursors.
QuantaPlan make_plan(devmodel::KernelKind kind, uint64_t extent, uint64_t inner_width,
                     double e_iter_uj, double e_ckpt_uj, double budget_uj);

// Like make_plan but with caller-chosen chunk sizes (used to build
// deliberately fragmented plans).
QuantaPlan make_plan_with_chunks(devmodel::KernelKind kind, const std::vector<uint64_t>& chunks,
                                 uint64_t inner_width, double e_iter_uj, double e_ckpt_uj,
                                 double budget_uj);

// Greedily merges consecutive quanta while the fused energy (iteration
// energies plus a single checkpoint) stays within the budget. Coverage is
// preserved; the checkpoint count never grows.
QuantaPlan fuse_tasks(const QuantaPlan& plan, double budget_uj);

inline constexpr uint16_t kCheckpointVersion = 1;

struct CheckpointState {
  uint16_t version = kCheckpointVersion;
  std::vector<uint32_t> cursor;  // (outer, inner) of the next iteration
  uint32_t plan_position = 0;
  kernels::FixedTensor partial_output;
};

CheckpointState save_state(const std::vector<uint32_t>& cursor,
                           const kernels::FixedTensor& partial_output,
                           uint32_t plan_position);
void load_state(const CheckpointState& state, std::vector<uint32_t>& cursor,
                kernels::FixedTensor& partial_output, uint32_t& plan_position);

// Length-prefixed little-endian snapshot with a trailing CRC-32. load of a
// truncated or bit-flipped snapshot reports CorruptSnapshot; an unknown
// version reports VersionMismatch.
std::vector<uint8_t> serialize_checkpoint(const CheckpointState& state);
CheckpointState deserialize_checkpoint(const std::vector<uint8_t>& bytes);

enum class EventKind { quanta_done, checkpoint, power_loss, restore, wait, escalation };

const char* event_kind_name(EventKind kind);

struct Event {
  double t_s = 0.0;
  EventKind kind = EventKind::wait;
  int64_t energy_delta_nj = 0;  // negative = debit
  uint32_t plan_position = 0;
};

struct ExecutionLog {
  std::vector<Event> events;
  int64_t initial_usable_nj = 0;
  int64_t harvested_nj = 0;
  int64_t debited_nj = 0;
  int64_t final_usable_nj = 0;
  int64_t lost_work_nj = 0;  // debits of quanta whose results were discarded

  size_t count(EventKind kind) const;
  // Exact integer ledger balance.
  bool conserves_energy() const {
    return initial_usable_nj + harvested_nj - debited_nj == final_usable_nj;
  }
};

// Deterministic injected power failures, indexed by execution attempt.
// mid_quanta discards the attempt's work; otherwise the loss hits after the
// quanta commits and checkpoints.
struct InjectedFailure {
  uint64_t exec_index = 0;
  bool mid_quanta = false;
};

struct RunOptions {
  double max_wait_s = 3600.0;  // simulated starvation cap
  std::vector<InjectedFailure> failures;
  std::optional<CheckpointState> resume_from;
};

struct GemmTask {
  kernels::FixedTensor a;
  kernels::FixedTensor b;
  kernels::QFormat out_fmt;
};

struct Conv2dTask {
  kernels::FixedTensor x;
  kernels::FixedTensor k;
  kernels::QFormat out_fmt;
};

using KernelTask = std::variant<GemmTask, Conv2dTask>;

uint64_t task_extent(const KernelTask& task);
uint64_t task_inner_width(const KernelTask& task);
uint64_t task_macs_per_iter(const KernelTask& task);
devmodel::KernelKind task_kind(const KernelTask& task);

struct RunResult {
  kernels::FixedTensor output;
  ExecutionLog log;
  ehsim::CapacitorState final_state;
  double elapsed_s = 0.0;
};

// Checkpointed execution of a gemm/conv2d task under the given energy
// environment. The fixed-point output is elementwise identical to the
// uninterrupted kernel.
RunResult run_intermittent(const KernelTask& task, const QuantaPlan& plan,
                           const ehsim::CapacitorState& capacitor,
                           const ehsim::EnergyTrace& trace,
                           const devmodel::HardwareProfile& profile,
                           const RunOptions& options = {});

// Energy/latency-only execution of a plan (no tensor values); the task
// scheduler drives non-gemm/conv kernels through this path.
RunResult run_plan_energy(const QuantaPlan& plan, devmodel::KernelKind kind,
                          uint64_t macs_per_iter, const ehsim::CapacitorState& capacitor,
                          const ehsim::EnergyTrace& trace,
                          const devmodel::HardwareProfile& profile,
                          const RunOptions& options = {}, double start_t_s = 0.0);

}  // namespace nexume::intermittent
