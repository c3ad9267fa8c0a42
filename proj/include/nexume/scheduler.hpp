/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nexume/devmodel.hpp"
#include "nexume/dynfit.hpp"
#include "nexume/ehsim.hpp"
#include "nexume/intermittent.hpp"

namespace nexume::scheduler {

// One decomposed inference task: a weight layer's kernel loop plus the
// non-weight layers that ride along with it, carrying an optimized+fused
// quanta plan.
struct Task {
  size_t id = 0;
  size_t layer_first = 0;  // first layer of the segment
  size_t layer_end = 0;    // one past the segment's last layer
  size_t weight_layer = 0; // the segment's weight layer
  devmodel::KernelKind kind = devmodel::KernelKind::gemm;
  std::vector<size_t> deps;
  double criticality = 0.0;   // [0,1]
  double deadline_ms = 0.0;
  double e_est_uj = 0.0;
  intermittent::QuantaPlan plan;
  uint64_t extent = 0;
  uint64_t inner_width = 1;
  uint64_t macs_per_iter = 0;
};

struct TaskGraph {
  std::vector<Task> tasks;
};

enum class PlanMode { optimized, naive_l1 };

// One task per weight-bearing layer; activation/pool layers fold into the
// preceding task. Criticality defaults to (i+1)/L so later layers win ties.
TaskGraph decompose(const dynfit::Network& net, const devmodel::HardwareProfile& profile,
                    double budget_uj, double deadline_ms,
                    PlanMode mode = PlanMode::optimized);

struct PriorityWeights {
  double w_d = 1.0;
  double w_c = 1.0;
  double w_e = 1.0;
};

// w_d / max(deadline - now, 1 ms) + w_c * criticality
//   + w_e * [energy covers the first quanta].
double priority(const Task& task, double now_ms, double energy_now_uj,
                const PriorityWeights& weights);

// Highest-priority ready task; ties break on earlier deadline, then lower id.
size_t pick_ready_task(const TaskGraph& graph, const std::vector<bool>& done,
                       double now_ms, double energy_now_uj, const PriorityWeights& weights);

struct EscalationConfig {
  bool enabled = true;
  double threshold_uj = -1.0;  // < 0: auto = 2x mean quanta energy of remaining tasks
  double factor = 1.5;
  bool step_down_q = false;
};

struct SLORecord {
  double latency_ms = 0.0;
  double deadline_ms = 0.0;
  bool correct = false;
  bool counted_correct = false;  // correct AND latency <= deadline
};

struct TaskRun {
  size_t task_id = 0;
  double start_ms = 0.0;
  double end_ms = 0.0;
  bool escalated = false;
  size_t restores = 0;
  size_t waits = 0;
};

struct InferenceOptions {
  double deadline_ms = 0.0;
  uint64_t seed = 0;
  EscalationConfig escalation;
  PlanMode plan_mode = PlanMode::optimized;
  double budget_uj = -1.0;  // < 0: capacitor's maximum usable energy
  double max_wait_s = 3600.0;
  PriorityWeights weights;
  std::vector<double> p_base;  // per-neuron inference dropout; empty = none
  std::vector<int> q_bits;     // per-neuron widths; empty = quantization off
};

struct InferenceResult {
  int prediction = -1;
  SLORecord slo;
  intermittent::ExecutionLog log;  // merged engine events
  std::vector<TaskRun> task_runs;
  size_t restores = 0;
  size_t escalations = 0;
  double energy_consumed_uj = 0.0;
  ehsim::CapacitorState final_state;
};

// Executes the decomposed task graph through the intermittent engine's
// energy/latency loop while the values flow through the float forward with
// the (possibly escalated) mask and quantization.
InferenceResult run_inference(const dynfit::Network& net, const Tensor& input, int label,
                              const ehsim::EnergyTrace& trace,
                              const ehsim::CapacitorState& capacitor,
                              const devmodel::HardwareProfile& profile,
                              const InferenceOptions& options);

std::string report_to_json(const InferenceResult& result);

}  // namespace nexume::scheduler
