/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "nexume/devmodel.hpp"
#include "nexume/dynfit.hpp"
#include "nexume/ehsim.hpp"

namespace nexume::nas {

// Fully enumerable grid: depth x per-layer (filters, kernel) x policy.
struct SearchSpace {
  std::vector<size_t> depths = {2, 3};
  std::vector<size_t> filter_options = {8, 16};
  std::vector<std::pair<size_t, size_t>> kernel_options = {{3, 3}, {5, 5}};
  std::vector<dynfit::PolicyKind> policies = {dynfit::PolicyKind::l2};
  std::vector<size_t> input_shape = {1, 16, 16};
  size_t num_classes = 4;
  size_t pool_window = 2;
};

// Candidates in the full cartesian product, including shapes that do not
// compose (those are flagged infeasible rather than silently skipped).
uint64_t analytic_count(const SearchSpace& space);

struct Candidate {
  size_t id = 0;
  size_t depth = 0;
  std::vector<size_t> filters;
  std::vector<std::pair<size_t, size_t>> kernels;
  dynfit::PolicyKind policy = dynfit::PolicyKind::l2;
  std::string descriptor;
  bool shape_ok = false;
  double est_latency_ms = std::numeric_limits<double>::infinity();
  bool feasible = false;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double val_accuracy = 0.0;
  bool trained = false;
  bool rejected_dominated = false;
};

std::vector<Candidate> enumerate_space(const SearchSpace& space);

std::string candidate_descriptor(const Candidate& candidate);

// Latency model: compute time plus the expected stall waiting for harvest,
// stall = max(0, total energy - initial usable) / mean trace power.
double estimate_latency_ms(const Candidate& candidate, const SearchSpace& space,
                           const devmodel::HardwareProfile& profile,
                           const ehsim::EnergyTrace& trace,
                           const ehsim::CapacitorState& capacitor);

inline bool slo_feasible(double latency_ms, double slo_ms) { return latency_ms <= slo_ms; }

// Estimates every candidate and applies the latency-SLO filter; candidates
// above the SLO are retained but flagged infeasible.
std::vector<Candidate> enumerate_and_filter(const SearchSpace& space,
                                            const devmodel::HardwareProfile& profile,
                                            const ehsim::EnergyTrace& trace,
                                            const ehsim::CapacitorState& capacitor,
                                            double slo_latency_ms);

// A candidate beaten on both latency and loss by another trained candidate
// is rejected as a configuration.
void mark_dominated(std::vector<Candidate>& candidates);

dynfit::Network build_network(const Candidate& candidate, const SearchSpace& space,
                              uint64_t seed);

struct SearchOptions {
  uint64_t seed = 1;
  size_t train_budget = 100;  // steps per candidate
  size_t batch_size = 16;
  double eta = 0.01;
  dynfit::LossKind loss = dynfit::LossKind::cross_entropy;
  double val_fraction = 0.2;
  // Candidate runs fan out across this many workers; each run is fully
  // self-contained, so the merged ranking is identical at any width.
  size_t threads = 1;
};

// Trains every feasible candidate for train_budget steps and ranks by
// validation loss (ties by id). Deterministic in the seed.
std::vector<Candidate> search(const std::vector<Candidate>& filtered,
                              const SearchSpace& space, const dynfit::Dataset& data,
                              const SearchOptions& options);

// descriptor,est_latency_ms,feasible,val_loss
std::string report_csv(const std::vector<Candidate>& candidates);

}  // namespace nexume::nas
