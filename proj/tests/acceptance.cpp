// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Each criterion enforces its own wall-clock cap.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "nexume/devmodel.hpp"
#include "nexume/dynfit.hpp"
#include "nexume/ehsim.hpp"
#include "nexume/errors.hpp"
#include "nexume/intermittent.hpp"
#include "nexume/kernels.hpp"
#include "nexume/nas.hpp"
#include "nexume/rng.hpp"
#include "nexume/scheduler.hpp"

using namespace nexume;

namespace {

struct Harness {
  int failures = 0;

  void run(const std::string& name, double limit_s, const std::function<void()>& fn) {
    auto start = std::chrono::steady_clock::now();
    std::string error;
    try {
      fn();
    } catch (const std::exception& e) {
      error = e.what();
    }
    double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool ok = error.empty() && elapsed <= limit_s;
    if (!ok) ++failures;
    std::printf("[%s] %s (%.2fs / limit %.0fs)%s%s\n", ok ? "PASS" : "FAIL",
                name.c_str(), elapsed, limit_s, error.empty() ? "" : " - ",
                error.c_str());
    std::fflush(stdout);
  }
};

void require(bool cond, const std::string& what) {
  if (!cond) throw std::runtime_error(what);
}

devmodel::HardwareProfile acceptance_profile() {
  devmodel::HardwareProfile p;
  p.name = "acceptance";
  for (auto kind : devmodel::kAllKernelKinds) {
    p.e_per_mac_nj[kind] = 5.0;
    p.t_per_mac_ns[kind] = 250.0;
  }
  p.e_checkpoint_nj = 3000.0;
  p.e_restore_nj = 1500.0;
  p.memory_levels = {{4096, 10.0}, {65536, 100.0}};
  return p;
}

kernels::FixedTensor random_fixed(Rng& rng, size_t rows, size_t cols) {
  Tensor t({rows, cols});
  for (auto& v : t.data) v = rng.next_uniform(-2.0, 2.0);
  return kernels::quantize(t, 12, 2.0);
}

// --------------------------------------------------------------------------
// 1. Intermittent execution is elementwise identical to the continuous
//    kernel across random shapes, plans, and failure schedules. Energy
//    conservation (criterion 11) is asserted on every run.
void criterion_intermittent_equals_continuous() {
  auto profile = acceptance_profile();
  auto cap = ehsim::CapacitorState::from_voltage(1.0, 3.3, 1.8, 3.3);
  size_t conservation_checks = 0;
  size_t total_losses = 0;
  size_t total_restores = 0;

  for (int trial = 0; trial < 200; ++trial) {
    Rng rng(mix_seed(0xACCE01, trial));
    bool use_gemm = trial % 2 == 0;
    intermittent::KernelTask task;
    if (use_gemm) {
      size_t m = 1 + rng.next_range(0, 15);
      size_t k = 1 + rng.next_range(0, 15);
      size_t n = 1 + rng.next_range(0, 15);
      task = intermittent::GemmTask{random_fixed(rng, m, k), random_fixed(rng, k, n),
                                    kernels::QFormat{12, 16.0}};
    } else {
      size_t h = 2 + rng.next_range(0, 14);
      size_t w = 2 + rng.next_range(0, 14);
      size_t kh = 1 + rng.next_range(0, std::min<size_t>(h, 3) - 1);
      size_t kw = 1 + rng.next_range(0, std::min<size_t>(w, 3) - 1);
      task = intermittent::Conv2dTask{random_fixed(rng, h, w), random_fixed(rng, kh, kw),
                                      kernels::QFormat{12, 32.0}};
    }
    uint64_t extent = intermittent::task_extent(task);
    uint64_t macs = intermittent::task_macs_per_iter(task);
    double e_iter = static_cast<double>(macs) * 0.005;
    double e_ckpt = 3.0;
    double budget = e_iter + e_ckpt + rng.next_uniform(0.0, 8.0);
    uint64_t l_max = intermittent::optimize_quanta(extent, e_iter, e_ckpt, budget);

    // Random plan: random chunk sizes within the optimizer's cap.
    std::vector<uint64_t> chunks;
    uint64_t left = extent;
    while (left > 0) {
      uint64_t l = 1 + rng.next_range(0, std::min(l_max, left) - 1);
      chunks.push_back(l);
      left -= l;
    }
    auto plan = intermittent::make_plan_with_chunks(
        intermittent::task_kind(task), chunks, intermittent::task_inner_width(task),
        e_iter, e_ckpt, budget);

    intermittent::RunOptions opts;
    for (uint64_t i = 0; i < 2 * plan.quanta.size(); ++i) {
      if (rng.next_double() < 0.25) opts.failures.push_back({i, rng.next_double() < 0.5});
    }
    auto trace = ehsim::make_constant_trace(rng.next_uniform(20000.0, 90000.0), 1.0, 0.001);
    auto result = intermittent::run_intermittent(task, plan, cap, trace, profile, opts);

    kernels::FixedTensor oracle;
    if (use_gemm) {
      const auto& g = std::get<intermittent::GemmTask>(task);
      oracle = kernels::gemm(g.a, g.b, g.out_fmt);
    } else {
      const auto& c = std::get<intermittent::Conv2dTask>(task);
      oracle = kernels::conv2d(c.x, c.k, c.out_fmt);
    }
    require(result.output.codes == oracle.codes,
            "intermittent output diverged from the continuous kernel");
    require(result.log.conserves_energy(), "energy ledger did not balance");
    ++conservation_checks;
    total_losses += result.log.count(intermittent::EventKind::power_loss);
    total_restores += result.log.count(intermittent::EventKind::restore);

    int64_t budget_nj = ehsim::uj_to_nj(budget);
    uint32_t prev = 0, last_ckpt = 0;
    for (const auto& e : result.log.events) {
      if (e.kind == intermittent::EventKind::quanta_done) {
        require(-e.energy_delta_nj <= budget_nj, "quanta debit exceeded the budget");
      }
      if (e.kind == intermittent::EventKind::restore) {
        require(e.plan_position == last_ckpt, "restore jumped past the checkpoint");
      } else {
        require(e.plan_position >= prev, "plan position regressed outside a restore");
      }
      if (e.kind == intermittent::EventKind::checkpoint) last_ckpt = e.plan_position;
      prev = e.plan_position;
    }
  }
  require(conservation_checks == 200, "expected 200 conservation checks");
  // The schedules must actually bite or the equivalence is vacuous.
  require(total_losses >= 100, "failure schedules injected too few power losses");
  require(total_restores >= 50, "failure schedules exercised too few restores");
}

// --------------------------------------------------------------------------
// 2. The closed-form quanta optimizer matches exhaustive search exactly.
void criterion_optimizer_vs_brute_force() {
  Rng rng(0xACCE02);
  for (int trial = 0; trial < 1000; ++trial) {
    uint64_t extent = 1 + rng.next_range(0, 199);
    double e_iter = rng.next_uniform(0.01, 5.0);
    double e_ckpt = rng.next_uniform(0.01, 8.0);
    double budget = rng.next_uniform(0.05, 25.0);

    uint64_t expected = 0;
    for (uint64_t l = 1; l <= extent; ++l) {
      if (static_cast<double>(l) * e_iter + e_ckpt <= budget) expected = l;
    }
    if (expected == 0) {
      bool threw = false;
      try {
        intermittent::optimize_quanta(extent, e_iter, e_ckpt, budget);
      } catch (const InfeasibleBudget&) {
        threw = true;
      }
      require(threw, "optimizer accepted an infeasible budget");
    } else {
      require(intermittent::optimize_quanta(extent, e_iter, e_ckpt, budget) == expected,
              "optimizer disagreed with exhaustive search");
    }
  }
}

// --------------------------------------------------------------------------
// 3. Fusion preserves coverage, never adds checkpoints, never over-budgets.
void criterion_fusion_soundness() {
  Rng rng(0xACCE03);
  for (int trial = 0; trial < 500; ++trial) {
    double e_iter = rng.next_uniform(0.05, 3.0);
    double e_ckpt = rng.next_uniform(0.05, 4.0);
    double budget = e_iter + e_ckpt + rng.next_uniform(0.0, 20.0);
    uint64_t extent = 1 + rng.next_range(0, 119);
    uint64_t l_max = intermittent::optimize_quanta(extent, e_iter, e_ckpt, budget);

    std::vector<uint64_t> chunks;
    uint64_t left = extent;
    while (left > 0) {
      uint64_t l = 1 + rng.next_range(0, std::min(l_max, left) - 1);
      chunks.push_back(l);
      left -= l;
    }
    auto plan = intermittent::make_plan_with_chunks(devmodel::KernelKind::gemm, chunks,
                                                    16, e_iter, e_ckpt, budget);
    auto fused = intermittent::fuse_tasks(plan, budget);

    std::set<uint64_t> before, after;
    for (const auto& q : plan.quanta) {
      for (uint64_t i = q.start_iter; i < q.start_iter + q.l; ++i) before.insert(i);
    }
    for (const auto& q : fused.quanta) {
      for (uint64_t i = q.start_iter; i < q.start_iter + q.l; ++i) after.insert(i);
    }
    require(before == after, "fusion changed the iteration coverage");
    require(fused.quanta.size() <= plan.quanta.size(), "fusion added checkpoints");
    for (const auto& q : fused.quanta) {
      require(q.e_uj <= budget + 1e-12, "fusion emitted a quanta above the budget");
    }
  }
}

// --------------------------------------------------------------------------
// 4. Reverse-mode gradients match central finite differences on every
//    weight of a seeded MLP (<= 200 parameters).
void criterion_gradient_check() {
  dynfit::Network net;
  net.input_shape = {6};
  net.layers.push_back(dynfit::dense_layer(6, 12));
  net.layers.push_back(dynfit::act_layer(dynfit::Act::tanh_fn));
  net.layers.push_back(dynfit::dense_layer(12, 6));
  dynfit::init_weights(net, 0xACCE04);
  require(net.param_count() <= 200, "gradient-check net too large");

  Rng rng(0xACCE14);
  dynfit::Batch batch;
  for (int i = 0; i < 5; ++i) {
    dynfit::Sample s;
    s.x = Tensor({6});
    for (auto& v : s.x.data) v = rng.next_uniform(-1, 1);
    s.target = Tensor({6});
    for (auto& v : s.target.data) v = rng.next_uniform(-1, 1);
    batch.push_back(s);
  }

  auto bp = dynfit::backward_with_context(net, batch, dynfit::LossKind::mse, {});
  auto w = net.flat_weights();
  auto loss_at = [&](const std::vector<double>& weights) {
    dynfit::Network probe = net;
    probe.set_flat_weights(weights);
    double total = 0.0;
    for (const auto& s : batch) {
      total += dynfit::loss_value(dynfit::forward(probe, s.x), s, dynfit::LossKind::mse);
    }
    return total / static_cast<double>(batch.size());
  };
  for (size_t i = 0; i < w.size(); ++i) {
    double h = 1e-3 * (1.0 + std::fabs(w[i]));
    auto wp = w;
    wp[i] += h;
    auto wm = w;
    wm[i] -= h;
    double fd = (loss_at(wp) - loss_at(wm)) / (2.0 * h);
    double rel = std::fabs(bp.grad[i] - fd) /
                 std::max({std::fabs(bp.grad[i]), std::fabs(fd), 1e-3});
    require(rel <= 1e-4, "gradient mismatch at weight " + std::to_string(i));
  }
}

// --------------------------------------------------------------------------
// 5. The six dropout formulations reproduce their worked examples, and
//    exact Shapley values satisfy efficiency on the enumeration cases.
void criterion_dropout_formulas() {
  const double tol = 1e-9;
  auto close = [&](double a, double b) { return std::fabs(a - b) <= tol; };

  // d1: inverse L2 norm.
  {
    dynfit::Network net;
    net.input_shape = {2};
    net.layers.push_back(dynfit::dense_layer(2, 1));
    std::get<dynfit::DenseLayer>(net.layers[0]).w.data = {3.0, 4.0};
    dynfit::DropoutPolicy policy;
    policy.scale = 0.5;
    policy.epsilon = 0.0;
    auto p = dynfit::probs_l2(net, policy);
    require(close(p[0], 0.1), "l2 example failed");
    policy.scale = 0.0;
    require(dynfit::probs_l2(net, policy)[0] == 0.0, "l2 zero-alpha failed");
    policy.scale = 0.5;
    policy.epsilon = 0.1;
    std::get<dynfit::DenseLayer>(net.layers[0]).w.data = {0.0, 0.0};
    require(close(dynfit::probs_l2(net, policy)[0], 0.9), "l2 clamp failed");
  }

  // d2: OBD sensitivity ratios.
  {
    dynfit::Network net;
    net.input_shape = {1};
    net.layers.push_back(dynfit::dense_layer(1, 2));
    std::get<dynfit::DenseLayer>(net.layers[0]).w.data = {1.0, 2.0};
    std::vector<double> hess = {2.0, 2.0, 0.0, 0.0};  // s = [2, 8]
    dynfit::DropoutPolicy policy;
    policy.scale = 1.0;
    policy.epsilon = 0.0;
    auto p = dynfit::probs_obd(net, hess, policy);
    require(close(p[0], 0.25) && close(p[1], 0.9), "obd ratio example failed");
    std::get<dynfit::DenseLayer>(net.layers[0]).w.data = {1.0, 1.0};
    policy.scale = 0.3;
    auto pe = dynfit::probs_obd(net, hess, policy);
    require(close(pe[0], 0.3) && close(pe[1], 0.3), "obd equal-sensitivity failed");
    policy.scale = 0.0;
    require(dynfit::probs_obd(net, hess, policy)[0] == 0.0, "obd zero-beta failed");
  }

  // d3: reconstruction-error ratios.
  {
    dynfit::DropoutPolicy policy;
    policy.scale = 0.6;
    policy.epsilon = 0.0;
    auto p = dynfit::probs_fmre({{1.0}, {3.0}}, {{0.0}, {0.0}}, policy);
    require(close(p[0], 0.2) && close(p[1], 0.6), "fmre example failed");
    auto perfect = dynfit::probs_fmre({{1.0}}, {{1.0}}, policy);
    require(perfect[0] == 0.0, "fmre perfect reconstruction failed");
    policy.scale = 0.0;
    require(dynfit::probs_fmre({{1.0}}, {{0.0}}, policy)[0] == 0.0, "fmre zero-gamma");
  }

  // d4: learnable mask step.
  {
    std::vector<double> z = {0.0};
    auto m = dynfit::sparse_mask_step(z, {0.0}, 1.0);
    require(close(m[0], 0.5), "sigmoid midpoint failed");
    m = dynfit::sparse_mask_step(z, {0.5}, 1.0);
    require(close(z[0], -0.5), "logit update failed");
    require(close(m[0], 1.0 / (1.0 + std::exp(0.5))), "soft mask value failed");
  }

  // d5: exact Shapley enumeration, efficiency, and probabilities.
  {
    auto loss_of = [](uint32_t kept) {
      switch (kept) {
        case 0: return 4.0;
        case 1: return 2.0;
        case 2: return 3.0;
        default: return 0.0;
      }
    };
    auto phi = dynfit::shapley_exact(2, loss_of);
    require(phi[0] == -2.5 && phi[1] == -1.5, "2-neuron Shapley values wrong");
    require(phi[0] + phi[1] == loss_of(3) - loss_of(0), "2-neuron efficiency broken");

    const double v[3] = {1.0, 2.0, 3.0};
    auto additive = [&](uint32_t kept) {
      double loss = 6.0;
      for (int i = 0; i < 3; ++i) {
        if (kept & (1u << i)) loss -= v[i];
      }
      return loss;
    };
    auto phi3 = dynfit::shapley_exact(3, additive);
    for (int i = 0; i < 3; ++i) {
      require(std::fabs(phi3[i] + v[i]) <= 1e-12, "3-neuron Shapley value wrong");
    }
    require(std::fabs(phi3[0] + phi3[1] + phi3[2] - (additive(7) - additive(0))) <= 1e-12,
            "3-neuron efficiency broken");

    // p from importance: phi_tilde = (2.5, 1.5), delta = 0.3.
    double p0 = 0.3 / 2.5, p1 = 0.3 / 1.5;
    require(close(p0, 0.12) && close(p1, 0.2), "shapley probability arithmetic wrong");
  }

  // d6: Taylor impacts.
  {
    dynfit::DropoutPolicy policy;
    policy.scale = 0.1;
    policy.epsilon = 0.0;
    auto p = dynfit::probs_taylor({0.5, 2.0}, policy);
    require(close(p[0], 0.2) && close(p[1], 0.05), "taylor example failed");
    require(dynfit::probs_taylor({1e12}, policy)[0] <= 1e-9, "taylor limit failed");
    policy.scale = 0.0;
    require(dynfit::probs_taylor({0.5}, policy)[0] == 0.0, "taylor zero-lambda failed");
  }

  // Quantization penalty examples live with the dropout family in the
  // training loss.
  {
    dynfit::QuantAssignment q;
    q.q_bits = {8, 4};
    q.lambda = 0.01;
    require(close(dynfit::quant_penalty_loss(1.0, q), 1.12), "penalty example failed");
    q.lambda = 0.0;
    require(dynfit::quant_penalty_loss(1.0, q) == 1.0, "zero-lambda penalty failed");
  }
}

// --------------------------------------------------------------------------
// 6. Bernoulli mask statistics stay inside 3-sigma binomial bounds.
void criterion_mask_statistics() {
  const size_t n = 100000;
  for (double p : {0.1, 0.3, 0.5}) {
    size_t kept = 0;
    for (size_t i = 0; i < n; ++i) {
      kept += dynfit::sample_mask({p}, mix_seed(0xACCE06, i)).m[0];
    }
    double rate = static_cast<double>(kept) / static_cast<double>(n);
    double bound = 3.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
    require(std::fabs(rate - (1.0 - p)) <= bound,
            "keep rate outside 3 sigma at p=" + std::to_string(p));
  }
}

// --------------------------------------------------------------------------
// 7. Fuzzed masked updates never touch dropped weights; fine-tuning
//    catches up the under-trained set while freezing the rest bit-exactly.
void criterion_masked_updates_and_finetune() {
  dynfit::Network net;
  net.input_shape = {4};
  net.layers.push_back(dynfit::dense_layer(4, 6));
  net.layers.push_back(dynfit::act_layer(dynfit::Act::relu));
  net.layers.push_back(dynfit::dense_layer(6, 3));
  dynfit::init_weights(net, 0xACCE07);

  Rng rng(0xACCE17);
  dynfit::Dataset data;
  data.num_classes = 3;
  for (int i = 0; i < 24; ++i) {
    dynfit::Sample s;
    s.x = Tensor({4});
    for (auto& v : s.x.data) v = rng.next_uniform(-1, 1);
    s.label = i % 3;
    s.target = Tensor({3});
    s.target.data[static_cast<size_t>(s.label)] = 1.0;
    data.samples.push_back(s);
  }

  auto tracker = dynfit::UpdateTracker::for_network(net, 0.5);
  dynfit::QuantAssignment quant;
  quant.q_bits.assign(net.neuron_count(), 16);
  dynfit::TrainConfig cfg;
  cfg.eta = 0.02;
  cfg.loss = dynfit::LossKind::cross_entropy;
  cfg.seed = 0xACCE27;

  const dynfit::PolicyKind kinds[] = {
      dynfit::PolicyKind::l2, dynfit::PolicyKind::taylor, dynfit::PolicyKind::fixed_rate,
      dynfit::PolicyKind::fmre, dynfit::PolicyKind::sparse_mask,
      dynfit::PolicyKind::shapley, dynfit::PolicyKind::obd};
  dynfit::DropoutPolicy policies[7];
  for (int i = 0; i < 7; ++i) {
    policies[i].kind = kinds[i];
    policies[i].scale = (kinds[i] == dynfit::PolicyKind::fixed_rate) ? 0.5 : 0.4;
    policies[i].seed = mix_seed(0xACCE37, i);
    policies[i].shapley_layer = 0;
  }

  auto refs = net.neuron_refs();
  for (uint64_t step = 0; step < 100; ++step) {
    auto& policy = policies[step % 7];
    auto batch = dynfit::next_batch(data, 6, step);
    auto before = net.flat_weights();
    auto metrics = dynfit::train_step(net, batch, policy, quant, nullptr, tracker, cfg, step);
    auto after = net.flat_weights();
    for (size_t ni = 0; ni < metrics.mask.size(); ++ni) {
      if (metrics.mask[ni]) continue;
      const auto& r = refs[ni];
      for (size_t k = 0; k < r.weight_count; ++k) {
        size_t idx = r.weight_offset + k * r.weight_stride;
        require(after[idx] == before[idx], "a dropped weight changed");
      }
      if (r.bias_index >= 0) {
        require(after[static_cast<size_t>(r.bias_index)] ==
                    before[static_cast<size_t>(r.bias_index)],
                "a dropped bias changed");
      }
    }
  }

  // Fine-tune contract.
  auto selected = dynfit::select_undertrained(tracker);
  auto before = net.flat_weights();
  const size_t max_epochs = 200;
  dynfit::finetune(net, tracker, data, 6, max_epochs, cfg);
  auto after = net.flat_weights();
  std::set<size_t> selected_set(selected.begin(), selected.end());
  for (size_t i = 0; i < before.size(); ++i) {
    if (!selected_set.count(i)) {
      require(after[i] == before[i], "a frozen weight changed during fine-tune");
    }
  }
  // Every tracked (selected) ratio reached theta, or the epoch cap was hit.
  bool all_reached = true;
  for (size_t i : selected) {
    double ratio = static_cast<double>(tracker.updates[i]) /
                   static_cast<double>(tracker.iterations);
    if (ratio < tracker.theta) all_reached = false;
  }
  size_t steps_per_epoch = (data.samples.size() + 5) / 6;
  bool cap_hit = tracker.iterations >= 100 + max_epochs * steps_per_epoch;
  require(all_reached || cap_hit, "fine-tune ended early without reaching theta");
}

// --------------------------------------------------------------------------
// 8. Quantization ladder: round-trip error within the analytic bound at
//    every width and monotone non-increasing with bits.
void criterion_quantization_ladder() {
  Rng rng(0xACCE08);
  const size_t n = 100000;
  const double scale = 2.0;
  std::vector<double> values(n);
  for (auto& v : values) v = rng.next_uniform(-scale, scale);

  double prev_rms = -1.0, prev_max = -1.0;
  for (int bits : {16, 12, 8, 4}) {
    kernels::QFormat fmt{bits, scale};
    double bound = fmt.step() / 2.0 + 1e-15;
    double rms = 0.0, max_err = 0.0;
    for (double v : values) {
      double err = std::fabs(kernels::quantize_value(v, bits, scale) - v);
      require(err <= bound, "round-trip error above the analytic bound");
      rms += err * err;
      max_err = std::max(max_err, err);
    }
    rms = std::sqrt(rms / static_cast<double>(n));
    if (prev_rms >= 0.0) {
      require(rms >= prev_rms, "rms error not monotone across widths");
      require(max_err >= prev_max, "max error not monotone across widths");
    }
    prev_rms = rms;
    prev_max = max_err;
  }
}

// --------------------------------------------------------------------------
// 9. The published latency filter example: 380/260/280 ms against a 300 ms
//    SLO rejects the first and accepts the other two.
void criterion_slo_filter() {
  std::vector<nas::Candidate> candidates(3);
  candidates[0].est_latency_ms = 380.0;
  candidates[1].est_latency_ms = 260.0;
  candidates[2].est_latency_ms = 280.0;
  for (auto& c : candidates) {
    c.shape_ok = true;
    c.feasible = nas::slo_feasible(c.est_latency_ms, 300.0);
  }
  require(!candidates[0].feasible, "380 ms should be rejected at a 300 ms SLO");
  require(candidates[1].feasible, "260 ms should be accepted at a 300 ms SLO");
  require(candidates[2].feasible, "280 ms should be accepted at a 300 ms SLO");
}

// --------------------------------------------------------------------------
// 10. Directional end-to-end: dynamic-dropout training plus escalation and
//     optimized quanta beats static dropout with naive checkpointing on
//     SLO-counted accuracy, on at least 4 of 5 seeds. Energy conservation
//     is asserted on every inference (criterion 11).
void criterion_directional_end_to_end() {
  auto profile = devmodel::builtin_profile("synth-mid");
  const double slo_ms = 300.0;
  const size_t eval_count = 32;
  int wins = 0;

  for (uint64_t seed = 1; seed <= 5; ++seed) {
    auto train_data = dynfit::make_fourclass_dataset(192, mix_seed(0xACCE10, seed));
    auto test_data = dynfit::make_fourclass_dataset(eval_count, mix_seed(0xACCE20, seed));

    auto build_net = [&](uint64_t s) {
      dynfit::Network net;
      net.input_shape = {1, 8, 8};
      net.layers.push_back(dynfit::conv2d_layer(1, 4, 3, 3));
      net.layers.push_back(dynfit::act_layer(dynfit::Act::relu));
      net.layers.push_back(dynfit::conv2d_layer(4, 4, 3, 3));
      net.layers.push_back(dynfit::act_layer(dynfit::Act::relu));
      net.layers.push_back(dynfit::avgpool_layer(2));
      net.layers.push_back(dynfit::dense_layer(4 * 2 * 2, 4));
      dynfit::init_weights(net, s);
      return net;
    };

    dynfit::TrainConfig cfg;
    cfg.eta = 0.02;
    cfg.loss = dynfit::LossKind::cross_entropy;
    cfg.seed = mix_seed(0xACCE30, seed);

    auto train = [&](dynfit::Network& net, dynfit::PolicyKind kind, double scale,
                     std::vector<double>& p_out) {
      dynfit::DropoutPolicy policy;
      policy.kind = kind;
      policy.scale = scale;
      policy.seed = mix_seed(0xACCE40, seed);
      dynfit::QuantAssignment quant;
      quant.q_bits.assign(net.neuron_count(), 16);
      auto tracker = dynfit::UpdateTracker::for_network(net);
      std::vector<double> last_p(net.neuron_count(), 0.0);
      for (uint64_t step = 0; step < 400; ++step) {
        auto batch = dynfit::next_batch(train_data, 16, step);
        auto metrics =
            dynfit::train_step(net, batch, policy, quant, nullptr, tracker, cfg, step);
        last_p = metrics.p;
      }
      p_out = last_p;
    };

    auto dyn_net = build_net(mix_seed(0xACCE50, seed));
    std::vector<double> dyn_p;
    train(dyn_net, dynfit::PolicyKind::l2, 0.05, dyn_p);

    auto static_net = build_net(mix_seed(0xACCE50, seed));  // same init
    std::vector<double> static_p;
    train(static_net, dynfit::PolicyKind::fixed_rate, 0.2, static_p);

    // Piezo-like bursty trace and a small storage capacitor.
    auto trace = ehsim::make_piezo_trace(9000.0, 0.08, 0.12, 20.0, 0.001,
                                         mix_seed(0xACCE60, seed));
    auto capacitor = ehsim::CapacitorState::from_voltage(47e-6, 2.6, 1.8, 3.3);

    size_t dyn_counted = 0, static_counted = 0;
    for (size_t i = 0; i < eval_count; ++i) {
      const auto& sample = test_data.samples[i];

      scheduler::InferenceOptions dyn_opts;
      dyn_opts.deadline_ms = slo_ms;
      dyn_opts.seed = mix_seed(0xACCE70 + i, seed);
      dyn_opts.plan_mode = scheduler::PlanMode::optimized;
      dyn_opts.escalation.enabled = true;
      dyn_opts.p_base = dyn_p;
      auto dyn_result = scheduler::run_inference(dyn_net, sample.x, sample.label, trace,
                                                 capacitor, profile, dyn_opts);
      require(dyn_result.log.conserves_energy(), "dyn inference energy imbalance");
      if (dyn_result.slo.counted_correct) ++dyn_counted;

      scheduler::InferenceOptions st_opts;
      st_opts.deadline_ms = slo_ms;
      st_opts.seed = mix_seed(0xACCE70 + i, seed);
      st_opts.plan_mode = scheduler::PlanMode::naive_l1;
      st_opts.escalation.enabled = false;
      st_opts.max_wait_s = 30.0;  // let it run far past the SLO, bounded
      auto st_result = [&]() {
        try {
          return scheduler::run_inference(static_net, sample.x, sample.label, trace,
                                          capacitor, profile, st_opts);
        } catch (const Starvation&) {
          scheduler::InferenceResult timed_out;
          timed_out.slo.counted_correct = false;
          timed_out.log.initial_usable_nj = timed_out.log.final_usable_nj = 0;
          return timed_out;
        }
      }();
      require(st_result.log.conserves_energy(), "static inference energy imbalance");
      if (st_result.slo.counted_correct) ++static_counted;
    }
    if (dyn_counted > static_counted) ++wins;
    std::printf("  seed %llu: dynamic %zu/%zu vs static %zu/%zu counted-correct\n",
                static_cast<unsigned long long>(seed), dyn_counted, eval_count,
                static_counted, eval_count);
  }
  require(wins >= 4, "dynamic training won only " + std::to_string(wins) + "/5 seeds");
}

}  // namespace

int main() {
  Harness h;
  h.run("criterion 1: intermittent == continuous (200 randomized runs)", 60,
        criterion_intermittent_equals_continuous);
  h.run("criterion 2: quanta optimizer matches brute force (1000 tuples)", 10,
        criterion_optimizer_vs_brute_force);
  h.run("criterion 3: fusion soundness (500 random plans)", 10,
        criterion_fusion_soundness);
  h.run("criterion 4: gradient check vs central differences", 30,
        criterion_gradient_check);
  h.run("criterion 5: dropout formulation unit suite", 10, criterion_dropout_formulas);
  h.run("criterion 6: mask statistics within 3 sigma", 5, criterion_mask_statistics);
  h.run("criterion 7: masked-update safety and fine-tune contract", 60,
        criterion_masked_updates_and_finetune);
  h.run("criterion 8: quantization ladder", 5, criterion_quantization_ladder);
  h.run("criterion 9: 300 ms SLO filter on 380/260/280 ms", 1, criterion_slo_filter);
  h.run("criterion 10: directional end-to-end SLO accuracy", 600,
        criterion_directional_end_to_end);
  std::printf("criterion 11: energy conservation asserted inside criteria 1 and 10\n");
  if (h.failures > 0) {
    std::printf("%d criterion(s) failed\n", h.failures);
    return 1;
  }
  std::printf("all acceptance criteria passed\n");
  return 0;
}
