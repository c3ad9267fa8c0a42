/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "nexume/scheduler.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "nexume/errors.hpp"
#include "nexume/kernels.hpp"
#include "nexume/rng.hpp"

namespace nexume::scheduler {

namespace {

bool is_weight_layer(const dynfit::Layer& layer) {
  return std::holds_alternative<dynfit::DenseLayer>(layer) ||
         std::holds_alternative<dynfit::Conv2dLayer>(layer) ||
         std::holds_alternative<dynfit::DwsConv2dLayer>(layer);
}

intermittent::QuantaPlan build_plan(devmodel::KernelKind kind, uint64_t extent,
                                    uint64_t inner_width, double e_iter_uj,
                                    double e_ckpt_uj, double budget_uj, PlanMode mode) {
  if (mode == PlanMode::naive_l1) {
    std::vector<uint64_t> chunks(extent, 1);
    return intermittent::make_plan_with_chunks(kind, chunks, inner_width, e_iter_uj,
                                               e_ckpt_uj, budget_uj);
  }
  auto plan = intermittent::make_plan(kind, extent, inner_width, e_iter_uj, e_ckpt_uj,
                                      budget_uj);
  return intermittent::fuse_tasks(plan, budget_uj);
}

double mean_quanta_energy(const Task& task) {
  if (task.plan.quanta.empty()) return 0.0;
  double total = 0.0;
  for (const auto& q : task.plan.quanta) total += q.e_uj;
  return total / static_cast<double>(task.plan.quanta.size());
}

// Surviving iterations of the task's kernel loop under a hard mask: dropped
// output units (dense), filters (conv), or depthwise channels (dws) skip
// their share of the extent.
uint64_t effective_extent(const dynfit::Network& net, const Task& task,
                          const std::vector<uint8_t>& mask) {
  auto [first, count] = net.layer_neuron_span(task.weight_layer);
  const auto& layer = net.layers[task.weight_layer];
  uint64_t units = count;
  if (const auto* s = std::get_if<dynfit::DwsConv2dLayer>(&layer)) {
    units = s->ch;  // the loop covers the depthwise stage only
  }
  uint64_t kept = 0;
  for (size_t i = 0; i < units; ++i) kept += mask[first + i] ? 1 : 0;
  return kept * (task.extent / units);
}

}  // namespace

TaskGraph decompose(const dynfit::Network& net, const devmodel::HardwareProfile& profile,
                    double budget_uj, double deadline_ms, PlanMode mode) {
  std::vector<size_t> weight_layers;
  for (size_t li = 0; li < net.layers.size(); ++li) {
    if (is_weight_layer(net.layers[li])) weight_layers.push_back(li);
  }
  if (weight_layers.empty()) throw InvalidArgument("network has no weight layers");

  TaskGraph graph;
  double e_ckpt_uj = profile.e_checkpoint_nj / 1000.0;
  size_t n = weight_layers.size();
  for (size_t t = 0; t < n; ++t) {
    Task task;
    task.id = t;
    task.weight_layer = weight_layers[t];
    task.layer_first = (t == 0) ? 0 : weight_layers[t];
    task.layer_end = (t + 1 < n) ? weight_layers[t + 1] : net.layers.size();
    auto loop = dynfit::layer_loop_info(net, weight_layers[t]);
    task.kind = loop->kind;
    task.extent = loop->extent;
    task.inner_width = loop->inner_width;
    task.macs_per_iter = loop->macs_per_iter;
    if (t > 0) task.deps.push_back(t - 1);
    task.criticality = static_cast<double>(t + 1) / static_cast<double>(n);
    task.deadline_ms = deadline_ms;
    double e_iter_uj =
        static_cast<double>(task.macs_per_iter) * profile.e_per_mac(task.kind) / 1000.0;
    task.plan = build_plan(task.kind, task.extent, task.inner_width, e_iter_uj, e_ckpt_uj,
                           budget_uj, mode);
    for (const auto& q : task.plan.quanta) task.e_est_uj += q.e_uj;
    graph.tasks.push_back(std::move(task));
  }
  return graph;
}

double priority(const Task& task, double now_ms, double energy_now_uj,
                const PriorityWeights& weights) {
  double slack_ms = std::max(task.deadline_ms - now_ms, 1.0);
  double first_quanta_uj =
      task.plan.quanta.empty() ? 0.0 : task.plan.quanta.front().e_uj;
  double feasible = energy_now_uj >= first_quanta_uj ? 1.0 : 0.0;
  return weights.w_d / slack_ms + weights.w_c * task.criticality + weights.w_e * feasible;
}

size_t pick_ready_task(const TaskGraph& graph, const std::vector<bool>& done,
                       double now_ms, double energy_now_uj,
                       const PriorityWeights& weights) {
  size_t best = graph.tasks.size();
  double best_score = 0.0;
  for (size_t i = 0; i < graph.tasks.size(); ++i) {
    if (done[i]) continue;
    const Task& task = graph.tasks[i];
    bool ready = true;
    for (size_t d : task.deps) {
      if (!done[d]) ready = false;
    }
    if (!ready) continue;
    double score = priority(task, now_ms, energy_now_uj, weights);
    if (best == graph.tasks.size() || score > best_score ||
        (score == best_score && (task.deadline_ms < graph.tasks[best].deadline_ms ||
                                 (task.deadline_ms == graph.tasks[best].deadline_ms &&
                                  task.id < graph.tasks[best].id)))) {
      best = i;
      best_score = score;
    }
  }
  if (best == graph.tasks.size()) throw InvalidArgument("no ready task to schedule");
  return best;
}

InferenceResult run_inference(const dynfit::Network& net, const Tensor& input, int label,
                              const ehsim::EnergyTrace& trace,
                              const ehsim::CapacitorState& capacitor,
                              const devmodel::HardwareProfile& profile,
                              const InferenceOptions& options) {
  double budget_uj = options.budget_uj;
  if (budget_uj < 0.0) budget_uj = ehsim::nj_to_uj(capacitor.max_energy_nj);
  TaskGraph graph = decompose(net, profile, budget_uj, options.deadline_ms,
                              options.plan_mode);

  size_t neurons = net.neuron_count();
  std::vector<double> p = options.p_base;
  if (p.empty()) p.assign(neurons, 0.0);
  if (p.size() != neurons) throw ShapeMismatch("p_base length does not match neuron count");
  std::vector<int> q_bits = options.q_bits;
  if (!q_bits.empty() && q_bits.size() != neurons) {
    throw ShapeMismatch("q_bits length does not match neuron count");
  }

  InferenceResult result;
  ehsim::CapacitorState state = capacitor;
  result.log.initial_usable_nj = state.energy_nj;
  double t_s = 0.0;
  std::vector<bool> done(graph.tasks.size(), false);
  size_t remaining = graph.tasks.size();

  // Hard mask accumulated as tasks run; neurons of layers not yet executed
  // keep mask 1 until their task samples them.
  std::vector<uint8_t> mask(neurons, 1);
  std::vector<double> mask_values(neurons, 1.0);
  double p_scale = 1.0;
  double p_max = 0.9;

  Tensor activation = input;

  while (remaining > 0) {
    size_t ti = pick_ready_task(graph, done, t_s * 1000.0,
                                ehsim::usable_energy_uj(state), options.weights);
    Task& task = graph.tasks[ti];

    // Escalation check at the task boundary.
    if (options.escalation.enabled) {
      double threshold = options.escalation.threshold_uj;
      if (threshold < 0.0) {
        double mean = 0.0;
        size_t cnt = 0;
        for (size_t i = 0; i < graph.tasks.size(); ++i) {
          if (done[i]) continue;
          mean += mean_quanta_energy(graph.tasks[i]);
          ++cnt;
        }
        threshold = 2.0 * (cnt ? mean / static_cast<double>(cnt) : 0.0);
      }
      if (ehsim::usable_energy_uj(state) < threshold) {
        p_scale *= options.escalation.factor;
        if (options.escalation.step_down_q && !q_bits.empty()) {
          for (auto& b : q_bits) b = kernels::step_down_bits(b);
        }
        ++result.escalations;
        result.log.events.push_back({t_s, intermittent::EventKind::escalation, 0,
                                     static_cast<uint32_t>(task.id)});
      }
    }

    // Sample this task's layer mask under the current (escalated) p.
    auto [first, count] = net.layer_neuron_span(task.weight_layer);
    std::vector<double> p_task(count);
    for (size_t i = 0; i < count; ++i) {
      p_task[i] = std::clamp(p[first + i] * p_scale, 0.0, p_max);
    }
    auto ms = dynfit::sample_mask(p_task, mix_seed(options.seed, task.id));
    for (size_t i = 0; i < count; ++i) {
      mask[first + i] = ms.m[i];
      mask_values[first + i] = ms.m[i] ? 1.0 : 0.0;
    }

    // Energy/latency through the engine for the surviving iterations.
    uint64_t extent = effective_extent(net, task, mask);
    TaskRun run;
    run.task_id = task.id;
    run.start_ms = t_s * 1000.0;
    if (extent > 0) {
      double e_iter_uj = static_cast<double>(task.macs_per_iter) *
                         profile.e_per_mac(task.kind) / 1000.0;
      auto plan = build_plan(task.kind, extent, task.inner_width, e_iter_uj,
                             task.plan.e_ckpt_uj, budget_uj, options.plan_mode);
      intermittent::RunOptions run_opts;
      run_opts.max_wait_s = options.max_wait_s;
      auto r = intermittent::run_plan_energy(plan, task.kind, task.macs_per_iter, state,
                                             trace, profile, run_opts, t_s);
      state = r.final_state;
      t_s += r.elapsed_s;
      run.restores = r.log.count(intermittent::EventKind::restore);
      run.waits = r.log.count(intermittent::EventKind::wait);
      result.restores += run.restores;
      result.log.harvested_nj += r.log.harvested_nj;
      result.log.debited_nj += r.log.debited_nj;
      result.log.lost_work_nj += r.log.lost_work_nj;
      for (const auto& e : r.log.events) result.log.events.push_back(e);
    }
    run.end_ms = t_s * 1000.0;
    result.task_runs.push_back(run);

    // Value propagation for the task's layer segment.
    dynfit::Network segment;
    auto shapes = net.layer_output_shapes();
    segment.input_shape =
        (task.layer_first == 0) ? net.input_shape : shapes[task.layer_first - 1];
    for (size_t li = task.layer_first; li < task.layer_end; ++li) {
      segment.layers.push_back(net.layers[li]);
    }
    dynfit::EvalOptions opts;
    size_t seg_first_neuron = net.layer_neuron_span(task.layer_first).first;
    size_t seg_neurons = segment.neuron_count();
    opts.mask.assign(mask_values.begin() + seg_first_neuron,
                     mask_values.begin() + seg_first_neuron + seg_neurons);
    if (!q_bits.empty()) {
      opts.q_bits.assign(q_bits.begin() + seg_first_neuron,
                         q_bits.begin() + seg_first_neuron + seg_neurons);
    }
    activation = dynfit::forward(segment, activation, opts);

    done[ti] = true;
    --remaining;
  }

  result.log.final_usable_nj = state.energy_nj;
  result.final_state = state;
  result.energy_consumed_uj = ehsim::nj_to_uj(result.log.debited_nj);

  result.prediction = static_cast<int>(
      std::max_element(activation.data.begin(), activation.data.end()) -
      activation.data.begin());
  result.slo.latency_ms = t_s * 1000.0;
  result.slo.deadline_ms = options.deadline_ms;
  result.slo.correct = (result.prediction == label);
  result.slo.counted_correct =
      result.slo.correct && result.slo.latency_ms <= options.deadline_ms;
  return result;
}

std::string report_to_json(const InferenceResult& result) {
  nlohmann::json j;
  j["prediction"] = result.prediction;
  j["correct"] = result.slo.correct;
  j["latency_ms"] = result.slo.latency_ms;
  j["deadline_ms"] = result.slo.deadline_ms;
  j["counted_correct"] = result.slo.counted_correct;
  j["restores"] = result.restores;
  j["escalations"] = result.escalations;
  j["energy_consumed_uJ"] = result.energy_consumed_uj;
  return j.dump(2) + "\n";
}

}  // namespace nexume::scheduler
