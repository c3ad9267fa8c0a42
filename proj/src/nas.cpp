/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "nexume/nas.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

#include "nexume/errors.hpp"
#include "nexume/rng.hpp"

namespace nexume::nas {

namespace {

const char* policy_token(dynfit::PolicyKind kind) {
  switch (kind) {
    case dynfit::PolicyKind::l2: return "L2Drop";
    case dynfit::PolicyKind::obd: return "OBDDrop";
    case dynfit::PolicyKind::fmre: return "FMREDrop";
    case dynfit::PolicyKind::sparse_mask: return "SparseMaskDrop";
    case dynfit::PolicyKind::shapley: return "ShapleyDrop";
    case dynfit::PolicyKind::taylor: return "TaylorDrop";
    case dynfit::PolicyKind::fixed_rate: return "FixedDrop";
  }
  return "L2Drop";
}

struct LayerCost {
  uint64_t macs = 0;
  devmodel::KernelKind kind = devmodel::KernelKind::conv2d;
};

// MAC counts per layer for the candidate, or empty when shapes do not
// compose.
std::vector<LayerCost> layer_costs(const Candidate& c, const SearchSpace& space) {
  std::vector<LayerCost> costs;
  if (space.input_shape.size() != 3) return {};
  size_t ch = space.input_shape[0];
  size_t h = space.input_shape[1];
  size_t w = space.input_shape[2];
  for (size_t li = 0; li < c.depth; ++li) {
    auto [kh, kw] = c.kernels[li];
    if (h < kh || w < kw) return {};
    size_t oc = c.filters[li];
    size_t oh = h - kh + 1, ow = w - kw + 1;
    costs.push_back({static_cast<uint64_t>(oc) * oh * ow * ch * kh * kw,
                     devmodel::KernelKind::conv2d});
    ch = oc;
    h = oh;
    w = ow;
  }
  if (h < space.pool_window || w < space.pool_window) return {};
  h /= space.pool_window;
  w /= space.pool_window;
  if (h == 0 || w == 0) return {};
  uint64_t flat = static_cast<uint64_t>(ch) * h * w;
  costs.push_back({flat * space.num_classes, devmodel::KernelKind::matvec});
  return costs;
}

double mean_trace_power_uw(const ehsim::EnergyTrace& trace) {
  double dur = trace.duration_s();
  if (dur <= 0.0) return 0.0;
  return trace.energy_uj(0.0, dur) / dur;
}

}  // namespace

uint64_t analytic_count(const SearchSpace& space) {
  uint64_t per_layer = static_cast<uint64_t>(space.filter_options.size()) *
                       space.kernel_options.size();
  uint64_t total = 0;
  for (size_t d : space.depths) {
    uint64_t combos = 1;
    for (size_t i = 0; i < d; ++i) combos *= per_layer;
    total += combos;
  }
  return total * space.policies.size();
}

std::string candidate_descriptor(const Candidate& c) {
  std::ostringstream out;
  out << c.depth << "xCONV2D:";
  for (size_t i = 0; i < c.depth; ++i) {
    if (i) out << ',';
    out << c.filters[i] << '[' << c.kernels[i].first << 'x' << c.kernels[i].second << ']';
  }
  out << ",AvgPool," << policy_token(c.policy) << ",FC";
  return out.str();
}

std::vector<Candidate> enumerate_space(const SearchSpace& space) {
  if (space.depths.empty() || space.filter_options.empty() || space.kernel_options.empty() ||
      space.policies.empty()) {
    throw EmptySpace("search space has an empty option set");
  }
  std::vector<Candidate> out;
  size_t per_layer = space.filter_options.size() * space.kernel_options.size();
  for (size_t depth : space.depths) {
    uint64_t combos = 1;
    for (size_t i = 0; i < depth; ++i) combos *= per_layer;
    for (uint64_t code = 0; code < combos; ++code) {
      uint64_t rest = code;
      Candidate base;
      base.depth = depth;
      for (size_t li = 0; li < depth; ++li) {
        size_t pick = static_cast<size_t>(rest % per_layer);
        rest /= per_layer;
        base.filters.push_back(space.filter_options[pick / space.kernel_options.size()]);
        base.kernels.push_back(space.kernel_options[pick % space.kernel_options.size()]);
      }
      for (auto policy : space.policies) {
        Candidate c = base;
        c.policy = policy;
        c.id = out.size();
        c.descriptor = candidate_descriptor(c);
        out.push_back(std::move(c));
      }
    }
  }
  return out;
}

double estimate_latency_ms(const Candidate& candidate, const SearchSpace& space,
                           const devmodel::HardwareProfile& profile,
                           const ehsim::EnergyTrace& trace,
                           const ehsim::CapacitorState& capacitor) {
  auto costs = layer_costs(candidate, space);
  if (costs.empty()) return std::numeric_limits<double>::infinity();
  double compute_ns = 0.0;
  double energy_uj = 0.0;
  for (const auto& lc : costs) {
    compute_ns += static_cast<double>(lc.macs) * profile.t_per_mac(lc.kind);
    energy_uj += static_cast<double>(lc.macs) * profile.e_per_mac(lc.kind) / 1000.0;
  }
  double stall_s = 0.0;
  double deficit_uj = energy_uj - ehsim::usable_energy_uj(capacitor);
  if (deficit_uj > 0.0) {
    double mean_uw = mean_trace_power_uw(trace);
    stall_s = mean_uw > 0.0 ? deficit_uj / mean_uw
                            : std::numeric_limits<double>::infinity();
  }
  return compute_ns * 1e-6 + stall_s * 1000.0;
}

std::vector<Candidate> enumerate_and_filter(const SearchSpace& space,
                                            const devmodel::HardwareProfile& profile,
                                            const ehsim::EnergyTrace& trace,
                                            const ehsim::CapacitorState& capacitor,
                                            double slo_latency_ms) {
  auto candidates = enumerate_space(space);
  for (auto& c : candidates) {
    c.est_latency_ms = estimate_latency_ms(c, space, profile, trace, capacitor);
    c.shape_ok = std::isfinite(c.est_latency_ms);
    c.feasible = c.shape_ok && slo_feasible(c.est_latency_ms, slo_latency_ms);
  }
  return candidates;
}

void mark_dominated(std::vector<Candidate>& candidates) {
  for (auto& a : candidates) {
    if (!a.trained) continue;
    for (const auto& b : candidates) {
      if (&a == &b || !b.trained) continue;
      bool latency_no_worse = b.est_latency_ms <= a.est_latency_ms;
      bool loss_no_worse = b.val_loss <= a.val_loss;
      bool strictly_better =
          b.est_latency_ms < a.est_latency_ms || b.val_loss < a.val_loss;
      if (latency_no_worse && loss_no_worse && strictly_better) {
        a.rejected_dominated = true;
        break;
      }
    }
  }
}

dynfit::Network build_network(const Candidate& candidate, const SearchSpace& space,
                              uint64_t seed) {
  dynfit::Network net;
  net.input_shape = space.input_shape;
  size_t ch = space.input_shape[0];
  for (size_t li = 0; li < candidate.depth; ++li) {
    auto [kh, kw] = candidate.kernels[li];
    net.layers.push_back(dynfit::conv2d_layer(ch, candidate.filters[li], kh, kw));
    net.layers.push_back(dynfit::act_layer(dynfit::Act::relu));
    ch = candidate.filters[li];
  }
  net.layers.push_back(dynfit::avgpool_layer(space.pool_window));
  auto shapes = net.layer_output_shapes();
  size_t flat = shape_size(shapes.back());
  net.layers.push_back(dynfit::dense_layer(flat, space.num_classes));
  dynfit::init_weights(net, seed);
  return net;
}

std::vector<Candidate> search(const std::vector<Candidate>& filtered,
                              const SearchSpace& space, const dynfit::Dataset& data,
                              const SearchOptions& options) {
  std::vector<Candidate> out = filtered;
  bool any_feasible = false;
  for (const auto& c : out) {
    if (c.feasible) any_feasible = true;
  }
  if (!any_feasible) throw NoFeasibleCandidate("no candidate passes the SLO filter");

  // Deterministic train/validation split.
  size_t val_count = std::max<size_t>(1, static_cast<size_t>(
      static_cast<double>(data.samples.size()) * options.val_fraction));
  dynfit::Dataset train_set, val_set;
  train_set.num_classes = val_set.num_classes = data.num_classes;
  for (size_t i = 0; i < data.samples.size(); ++i) {
    if (i < data.samples.size() - val_count) train_set.samples.push_back(data.samples[i]);
    else val_set.samples.push_back(data.samples[i]);
  }

  // Each candidate run is self-contained (its own net, policy, and seeds),
  // so runs fan out across workers and merge by slot with no ordering
  // effects on the result.
  auto train_candidate = [&](Candidate& c) {
    if (!c.feasible) return;
    auto net = build_network(c, space, mix_seed(options.seed, c.id));
    dynfit::DropoutPolicy policy;
    policy.kind = c.policy;
    policy.seed = mix_seed(options.seed, c.id * 2 + 1);
    dynfit::QuantAssignment quant;  // disabled during search
    dynfit::UpdateTracker tracker = dynfit::UpdateTracker::for_network(net);
    dynfit::TrainConfig cfg;
    cfg.eta = options.eta;
    cfg.loss = options.loss;
    cfg.seed = mix_seed(options.seed, c.id * 2);
    for (size_t step = 0; step < options.train_budget; ++step) {
      auto batch = dynfit::next_batch(train_set, options.batch_size, step);
      dynfit::train_step(net, batch, policy, quant, nullptr, tracker, cfg, step);
    }
    double loss = 0.0;
    size_t correct = 0;
    for (const auto& s : val_set.samples) {
      Tensor y = dynfit::forward(net, s.x);
      loss += dynfit::loss_value(y, s, options.loss);
      int pred = static_cast<int>(std::max_element(y.data.begin(), y.data.end()) -
                                  y.data.begin());
      if (pred == s.label) ++correct;
    }
    c.val_loss = loss / static_cast<double>(val_set.samples.size());
    c.val_accuracy = static_cast<double>(correct) / static_cast<double>(val_set.samples.size());
    c.trained = true;
  };

  size_t workers = std::max<size_t>(options.threads, 1);
  if (workers <= 1 || out.size() <= 1) {
    for (auto& c : out) train_candidate(c);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (size_t w = 0; w < std::min(workers, out.size()); ++w) {
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < out.size(); i = next.fetch_add(1)) {
          train_candidate(out[i]);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  mark_dominated(out);
  std::stable_sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
    if (a.trained != b.trained) return a.trained;
    if (a.trained && b.trained && a.val_loss != b.val_loss) return a.val_loss < b.val_loss;
    return a.id < b.id;
  });
  return out;
}

std::string report_csv(const std::vector<Candidate>& candidates) {
  std::ostringstream out;
  out << "descriptor,est_latency_ms,feasible,val_loss\n";
  for (const auto& c : candidates) {
    out << '"' << c.descriptor << "\",";
    if (std::isfinite(c.est_latency_ms)) out << c.est_latency_ms;
    else out << "inf";
    out << ',' << (c.feasible ? "true" : "false") << ',';
    if (c.trained) out << c.val_loss;
    out << '\n';
  }
  return out.str();
}

}  // namespace nexume::nas
