/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include <algorithm>
#include <cmath>
#include <numeric>

#include "nexume/dynfit.hpp"
#include "nexume/errors.hpp"
#include "nexume/rng.hpp"

namespace nexume::dynfit {

namespace {

double clamp_prob(double raw, double p_max) {
  if (!std::isfinite(raw)) return p_max;
  return std::clamp(raw, 0.0, p_max);
}

// numerator / denominator with the convention 0/0 = 0, so a zero scaling
// factor always yields zero dropout even when epsilon is zero.
double safe_ratio(double numerator, double denominator) {
  if (numerator == 0.0) return 0.0;
  return numerator / denominator;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Batch-mean loss of the network with a given per-neuron hard mask on one
// layer (all other neurons kept); used by the Shapley coalition game.
double coalition_loss(const Network& net, const Batch& batch, LossKind kind,
                      size_t neuron_first, size_t n, uint32_t kept_bits) {
  EvalOptions opts;
  opts.mask.assign(net.neuron_count(), 1.0);
  for (size_t i = 0; i < n; ++i) {
    opts.mask[neuron_first + i] = (kept_bits >> i) & 1u ? 1.0 : 0.0;
  }
  double total = 0.0;
  for (const Sample& s : batch) {
    total += loss_value(forward(net, s.x, opts), s, kind);
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace

std::vector<double> probs_l2(const Network& net, const DropoutPolicy& policy) {
  auto refs = net.neuron_refs();
  auto w = net.flat_weights();
  std::vector<double> p(refs.size(), 0.0);
  for (size_t i = 0; i < refs.size(); ++i) {
    const auto& r = refs[i];
    double acc = 0.0;
    for (size_t k = 0; k < r.weight_count; ++k) {
      double v = w[r.weight_offset + k * r.weight_stride];
      acc += v * v;
    }
    double norm = std::sqrt(acc);
    p[i] = clamp_prob(safe_ratio(policy.scale, norm + policy.epsilon), policy.p_max);
  }
  return p;
}

std::vector<double> hessian_diag(const Network& net, const Batch& batch, LossKind kind) {
  if (batch.empty()) throw InvalidArgument("batch must be non-empty");
  Network work = net;
  std::vector<double> w = work.flat_weights();
  std::vector<double> h(w.size(), 0.0);
  EvalOptions plain;
  for (size_t j = 0; j < w.size(); ++j) {
    double step = 1e-3 * (1.0 + std::fabs(w[j]));
    double saved = w[j];
    w[j] = saved + step;
    work.set_flat_weights(w);
    auto plus = backward_with_context(work, batch, kind, plain);
    w[j] = saved - step;
    work.set_flat_weights(w);
    auto minus = backward_with_context(work, batch, kind, plain);
    w[j] = saved;
    if (!std::isfinite(plus.loss) || !std::isfinite(minus.loss)) {
      throw NonFiniteLoss("loss diverged while estimating the Hessian diagonal");
    }
    h[j] = (plus.grad[j] - minus.grad[j]) / (2.0 * step);
  }
  work.set_flat_weights(w);
  return h;
}

std::vector<double> probs_obd(const Network& net, const std::vector<double>& hess,
                              const DropoutPolicy& policy) {
  if (hess.size() != net.param_count()) {
    throw ShapeMismatch("hessian diagonal length does not match the parameter count");
  }
  for (double v : hess) {
    if (!std::isfinite(v)) throw NonFiniteHessian("hessian diagonal has non-finite entries");
  }
  auto refs = net.neuron_refs();
  auto w = net.flat_weights();
  std::vector<double> s(refs.size(), 0.0);
  for (size_t i = 0; i < refs.size(); ++i) {
    const auto& r = refs[i];
    double acc = 0.0;
    for (size_t k = 0; k < r.weight_count; ++k) {
      size_t idx = r.weight_offset + k * r.weight_stride;
      acc += hess[idx] * w[idx] * w[idx];
    }
    s[i] = acc;
  }
  double s_max = s.empty() ? 0.0 : *std::max_element(s.begin(), s.end());
  std::vector<double> p(refs.size(), 0.0);
  for (size_t i = 0; i < refs.size(); ++i) {
    p[i] = clamp_prob(safe_ratio(policy.scale * s[i], s_max + policy.epsilon), policy.p_max);
  }
  return p;
}

std::vector<double> probs_fmre(const std::vector<std::vector<double>>& feature_maps,
                               const std::vector<std::vector<double>>& reconstructions,
                               const DropoutPolicy& policy) {
  if (feature_maps.size() != reconstructions.size()) {
    throw ShapeMismatch("feature map and reconstruction counts differ");
  }
  std::vector<double> re(feature_maps.size(), 0.0);
  for (size_t i = 0; i < feature_maps.size(); ++i) {
    if (feature_maps[i].size() != reconstructions[i].size()) {
      throw ShapeMismatch("feature map and reconstruction sizes differ");
    }
    double acc = 0.0;
    for (size_t k = 0; k < feature_maps[i].size(); ++k) {
      double d = feature_maps[i][k] - reconstructions[i][k];
      acc += d * d;
    }
    re[i] = std::sqrt(acc);
  }
  double re_max = re.empty() ? 0.0 : *std::max_element(re.begin(), re.end());
  std::vector<double> p(re.size(), 0.0);
  for (size_t i = 0; i < re.size(); ++i) {
    p[i] = clamp_prob(safe_ratio(policy.scale * re[i], re_max + policy.epsilon), policy.p_max);
  }
  return p;
}

void fmre_feature_maps(const Network& net, const Batch& batch,
                       const std::vector<int>& q_bits,
                       std::vector<std::vector<double>>& feature_maps,
                       std::vector<std::vector<double>>& reconstructions) {
  if (batch.empty()) throw InvalidArgument("batch must be non-empty");
  size_t neurons = net.neuron_count();
  std::vector<int> base = q_bits;
  if (base.empty()) base.assign(neurons, 16);
  auto refs = net.neuron_refs();
  feature_maps.assign(neurons, {});
  reconstructions.assign(neurons, {});

  for (size_t ni = 0; ni < neurons; ++ni) {
    const NeuronRef& r = refs[ni];
    // Reference: the neuron's output map under the current widths.
    // Reconstruction: the same map with this neuron one width lower, so the
    // error measures the neuron's quantization sensitivity.
    Network trunc;
    trunc.input_shape = net.input_shape;
    for (size_t li = 0; li <= r.layer; ++li) trunc.layers.push_back(net.layers[li]);
    size_t trunc_neurons = trunc.neuron_count();
    EvalOptions cur_opts, low_opts;
    cur_opts.q_bits.assign(base.begin(), base.begin() + trunc_neurons);
    low_opts.q_bits = cur_opts.q_bits;
    low_opts.q_bits[ni] = kernels::step_down_bits(low_opts.q_bits[ni]);
    for (const Sample& s : batch) {
      Tensor cur = forward(trunc, s.x, cur_opts);
      Tensor low = forward(trunc, s.x, low_opts);
      size_t unit_count = cur.shape[0];
      size_t plane = cur.size() / unit_count;
      if (r.depthwise) {
        // A depthwise neuron feeds every output channel; compare the layer's
        // whole output map.
        for (size_t k = 0; k < cur.size(); ++k) {
          feature_maps[ni].push_back(cur.data[k]);
          reconstructions[ni].push_back(low.data[k]);
        }
      } else {
        for (size_t k = 0; k < plane; ++k) {
          feature_maps[ni].push_back(cur.data[r.unit * plane + k]);
          reconstructions[ni].push_back(low.data[r.unit * plane + k]);
        }
      }
    }
  }
}

std::vector<double> sparse_mask_step(std::vector<double>& z,
                                     const std::vector<double>& grad_z, double eta) {
  if (z.size() != grad_z.size()) throw ShapeMismatch("mask logits and gradient sizes differ");
  for (double g : grad_z) {
    if (!std::isfinite(g)) throw NonFiniteGradient("mask logit gradient is non-finite");
  }
  std::vector<double> m(z.size());
  for (size_t i = 0; i < z.size(); ++i) {
    z[i] -= eta * grad_z[i];
    m[i] = sigmoid(z[i]);
  }
  return m;
}

std::vector<double> shapley_exact(size_t n, const std::function<double(uint32_t)>& loss_of) {
  if (n == 0 || n > 25) throw InvalidArgument("exact Shapley supports 1..25 neurons");
  uint32_t full = (n >= 32) ? 0xffffffffu : ((1u << n) - 1u);
  // Memoize the coalition losses once: 2^n evaluations.
  std::vector<double> loss(static_cast<size_t>(full) + 1, 0.0);
  for (uint32_t s = 0; s <= full; ++s) loss[s] = loss_of(s);

  std::vector<double> fact(n + 1, 1.0);
  for (size_t i = 1; i <= n; ++i) fact[i] = fact[i - 1] * static_cast<double>(i);

  std::vector<double> phi(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    uint32_t bit = 1u << i;
    for (uint32_t s = 0; s <= full; ++s) {
      if (s & bit) continue;
      size_t size_s = static_cast<size_t>(__builtin_popcount(s));
      double weight = fact[size_s] * fact[n - size_s - 1] / fact[n];
      phi[i] += weight * (loss[s | bit] - loss[s]);
    }
  }
  return phi;
}

std::vector<double> shapley_monte_carlo(size_t n,
                                        const std::function<double(uint32_t)>& loss_of,
                                        size_t samples, uint64_t seed) {
  if (n == 0) throw InvalidArgument("need at least one neuron");
  Rng rng(seed);
  std::vector<double> phi(n, 0.0);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (size_t rep = 0; rep < samples; ++rep) {
    for (size_t i = n; i > 1; --i) {
      size_t j = static_cast<size_t>(rng.next_range(0, i - 1));
      std::swap(order[i - 1], order[j]);
    }
    uint32_t mask = 0;
    double prev = loss_of(mask);
    for (size_t idx : order) {
      mask |= (1u << idx);
      double cur = loss_of(mask);
      phi[idx] += cur - prev;
      prev = cur;
    }
  }
  for (auto& v : phi) v /= static_cast<double>(samples);
  return phi;
}

ShapleyResult shapley_probs(const Network& net, const Batch& batch, LossKind kind,
                            const DropoutPolicy& policy, ShapleyMode mode) {
  auto [first, count] = net.layer_neuron_span(policy.shapley_layer);
  if (count == 0) throw InvalidArgument("shapley target layer has no neurons");
  auto loss_of = [&](uint32_t kept) {
    return coalition_loss(net, batch, kind, first, count, kept);
  };
  ShapleyResult result;
  if (mode == ShapleyMode::exact && count > policy.max_exact) {
    throw TooManyNeuronsForExact("layer has " + std::to_string(count) +
                                 " neurons; exact enumeration is capped at " +
                                 std::to_string(policy.max_exact));
  }
  bool exact = (mode == ShapleyMode::exact) ||
               (mode == ShapleyMode::automatic && count <= policy.max_exact);
  result.phi = exact ? shapley_exact(count, loss_of)
                     : shapley_monte_carlo(count, loss_of, policy.mc_samples, policy.seed);
  result.p.resize(count);
  for (size_t i = 0; i < count; ++i) {
    double importance = std::max(-result.phi[i], 0.0);
    result.p[i] = clamp_prob(safe_ratio(policy.scale, importance + policy.epsilon), policy.p_max);
  }
  return result;
}

std::vector<double> probs_taylor(const std::vector<double>& impacts,
                                 const DropoutPolicy& policy) {
  std::vector<double> p(impacts.size(), 0.0);
  for (size_t i = 0; i < impacts.size(); ++i) {
    p[i] = clamp_prob(safe_ratio(policy.scale, std::fabs(impacts[i]) + policy.epsilon), policy.p_max);
  }
  return p;
}

std::vector<double> taylor_impacts(const Network& net, const Batch& batch, LossKind kind) {
  auto res = backward_with_context(net, batch, kind, {});
  std::vector<double> impacts(res.neuron_taylor.size());
  for (size_t i = 0; i < impacts.size(); ++i) impacts[i] = std::fabs(res.neuron_taylor[i]);
  return impacts;
}

MaskSample sample_mask(const std::vector<double>& p, uint64_t seed) {
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("dropout probabilities must be in [0,1]");
  }
  Rng rng(seed);
  MaskSample out;
  out.p = p;
  out.m.resize(p.size());
  for (size_t i = 0; i < p.size(); ++i) {
    out.m[i] = rng.next_double() >= p[i] ? 1 : 0;
  }
  return out;
}

double quant_penalty_loss(double base_loss, const QuantAssignment& quant) {
  if (quant.lambda < 0.0) throw InvalidArgument("lambda must be non-negative");
  double penalty = 0.0;
  for (size_t i = 0; i < quant.q_bits.size(); ++i) {
    double cost = quant.c.empty() ? 1.0 : quant.c[i];
    if (cost < 0.0) throw InvalidArgument("cost weights must be non-negative");
    penalty += cost * static_cast<double>(quant.q_bits[i]);
  }
  return base_loss + quant.lambda * penalty;
}

UpdateTracker UpdateTracker::for_network(const Network& net, double theta) {
  UpdateTracker t;
  t.updates.assign(net.param_count(), 0);
  t.iterations = 0;
  t.theta = theta;
  return t;
}

std::vector<double> update_ratio(const UpdateTracker& tracker) {
  if (tracker.iterations == 0) throw ZeroIterations("no training iterations observed");
  std::vector<double> r(tracker.updates.size());
  for (size_t i = 0; i < r.size(); ++i) {
    r[i] = static_cast<double>(tracker.updates[i]) / static_cast<double>(tracker.iterations);
  }
  return r;
}

std::vector<size_t> select_undertrained(const UpdateTracker& tracker) {
  auto ratios = update_ratio(tracker);
  std::vector<size_t> out;
  for (size_t i = 0; i < ratios.size(); ++i) {
    if (ratios[i] < tracker.theta) out.push_back(i);
  }
  return out;
}

std::optional<LayerLoopInfo> layer_loop_info(const Network& net, size_t layer_index) {
  auto shapes = net.layer_output_shapes();
  const Layer& layer = net.layers[layer_index];
  LayerLoopInfo info;
  if (const auto* d = std::get_if<DenseLayer>(&layer)) {
    info.kind = devmodel::KernelKind::matvec;
    info.extent = d->out;
    info.inner_width = d->out;
    info.macs_per_iter = d->in;
    return info;
  }
  if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
    const auto& os = shapes[layer_index];
    info.kind = devmodel::KernelKind::conv2d;
    info.extent = static_cast<uint64_t>(os[0]) * os[1] * os[2];
    info.inner_width = os[2];
    info.macs_per_iter = c->in_ch * c->kh * c->kw;
    return info;
  }
  if (const auto* s = std::get_if<DwsConv2dLayer>(&layer)) {
    const auto& os = shapes[layer_index];
    info.kind = devmodel::KernelKind::dwsconv2d;
    // One iteration = one depthwise output position; the pointwise MACs are
    // folded into the per-iteration cost.
    info.extent = static_cast<uint64_t>(s->ch) * os[1] * os[2];
    info.inner_width = os[2];
    info.macs_per_iter = s->kh * s->kw + s->out_ch;
    return info;
  }
  return std::nullopt;
}

StepMetrics train_step(Network& net, const Batch& batch, DropoutPolicy& policy,
                       const QuantAssignment& quant, const EnergyContext* energy,
                       UpdateTracker& tracker, const TrainConfig& config,
                       uint64_t step_index) {
  if (batch.empty()) throw InvalidArgument("batch must be non-empty");
  size_t neurons = net.neuron_count();
  size_t params = net.param_count();
  if (tracker.updates.size() != params) {
    throw ShapeMismatch("tracker size does not match the parameter count");
  }
  if (quant.enabled() && quant.q_bits.size() != neurons) {
    throw ShapeMismatch("quant assignment does not match the neuron count");
  }

  StepMetrics metrics;

  // 1. per-neuron dropout probabilities from the active policy.
  std::vector<double> p(neurons, 0.0);
  std::vector<double> soft_mask;  // sparse_mask only
  switch (policy.kind) {
    case PolicyKind::l2:
      p = probs_l2(net, policy);
      break;
    case PolicyKind::obd:
      p = probs_obd(net, hessian_diag(net, batch, config.loss), policy);
      break;
    case PolicyKind::fmre: {
      std::vector<std::vector<double>> f, fhat;
      fmre_feature_maps(net, batch, quant.q_bits, f, fhat);
      p = probs_fmre(f, fhat, policy);
      break;
    }
    case PolicyKind::sparse_mask: {
      if (policy.z.size() != neurons) policy.z.assign(neurons, 2.0);
      soft_mask.resize(neurons);
      for (size_t i = 0; i < neurons; ++i) {
        soft_mask[i] = sigmoid(policy.z[i]);
        p[i] = clamp_prob(1.0 - soft_mask[i], policy.p_max);
      }
      break;
    }
    case PolicyKind::shapley: {
      auto res = shapley_probs(net, batch, config.loss, policy);
      auto [first, count] = net.layer_neuron_span(policy.shapley_layer);
      for (size_t i = 0; i < count; ++i) p[first + i] = res.p[i];
      break;
    }
    case PolicyKind::taylor:
      p = probs_taylor(taylor_impacts(net, batch, config.loss), policy);
      break;
    case PolicyKind::fixed_rate:
      std::fill(p.begin(), p.end(), clamp_prob(policy.scale, policy.p_max));
      break;
  }

  // 2. mask sample (hard Bernoulli, or the learned soft mask).
  EvalOptions opts;
  std::vector<uint8_t> hard(neurons, 1);
  if (policy.kind == PolicyKind::sparse_mask) {
    opts.mask = soft_mask;
    for (size_t i = 0; i < neurons; ++i) hard[i] = soft_mask[i] >= 0.5 ? 1 : 0;
  } else {
    uint64_t mask_seed = mix_seed(policy.seed ? policy.seed : config.seed, step_index);
    MaskSample ms = sample_mask(p, mask_seed);
    hard = ms.m;
    opts.mask.resize(neurons);
    for (size_t i = 0; i < neurons; ++i) opts.mask[i] = ms.m[i] ? 1.0 : 0.0;
  }
  if (quant.enabled()) opts.q_bits = quant.q_bits;

  // 3. forward/backward with mask and fake quantization (straight-through).
  auto back = backward_with_context(net, batch, config.loss, opts);
  if (!std::isfinite(back.loss)) throw NonFiniteLoss("training loss is non-finite");
  metrics.loss = back.loss;
  metrics.penalized_loss =
      quant.enabled() ? quant_penalty_loss(back.loss, quant) : back.loss;

  // 4. masked update; dropped neurons provably unchanged.
  auto refs = net.neuron_refs();
  for (size_t ni = 0; ni < neurons; ++ni) {
    if (hard[ni]) continue;
    const auto& r = refs[ni];
    for (size_t k = 0; k < r.weight_count; ++k) {
      back.grad[r.weight_offset + k * r.weight_stride] = 0.0;
    }
    if (r.bias_index >= 0) back.grad[static_cast<size_t>(r.bias_index)] = 0.0;
  }
  std::vector<double> w = net.flat_weights();
  for (size_t i = 0; i < params; ++i) {
    double next = w[i] - config.eta * back.grad[i];
    if (next != w[i]) {
      w[i] = next;
      tracker.updates[i] += 1;
    }
  }
  net.set_flat_weights(w);
  tracker.iterations += 1;

  // 5. learned-mask logits follow their own gradient.
  if (policy.kind == PolicyKind::sparse_mask) {
    std::vector<double> z_grad(neurons, 0.0);
    for (size_t i = 0; i < neurons; ++i) {
      double s = soft_mask[i];
      z_grad[i] = back.neuron_mask_grad[i] * s * (1.0 - s);
    }
    sparse_mask_step(policy.z, z_grad, policy.z_lr);
  }

  // 6. re-optimize the per-layer quanta plans under the current budget.
  if (energy != nullptr) {
    for (size_t li = 0; li < net.layers.size(); ++li) {
      auto loop = layer_loop_info(net, li);
      if (!loop) continue;
      double e_iter_uj =
          static_cast<double>(loop->macs_per_iter) * energy->profile.e_per_mac(loop->kind) / 1000.0;
      double e_ckpt_uj = energy->profile.e_checkpoint_nj / 1000.0;
      auto plan = intermittent::make_plan(loop->kind, loop->extent, loop->inner_width,
                                          e_iter_uj, e_ckpt_uj, energy->budget_uj);
      auto fused = intermittent::fuse_tasks(plan, energy->budget_uj);
      LayerPlanInfo info;
      info.layer = li;
      info.kind = loop->kind;
      info.l_star = fused.quanta.empty() ? 0 : fused.quanta.front().l;
      info.quanta_count = fused.quanta.size();
      for (const auto& q : fused.quanta) info.total_energy_uj += q.e_uj;
      metrics.plans.push_back(info);
    }
  }

  metrics.p = p;
  metrics.mask = hard;
  for (uint8_t m : hard) {
    if (!m) ++metrics.dropped_neurons;
  }
  return metrics;
}

void finetune(Network& net, UpdateTracker& tracker, const Dataset& data, size_t batch_size,
              size_t max_epochs, const TrainConfig& config) {
  auto selected = select_undertrained(tracker);
  if (selected.empty()) return;
  std::vector<uint8_t> is_selected(net.param_count(), 0);
  for (size_t i : selected) is_selected[i] = 1;

  size_t steps_per_epoch =
      (data.samples.size() + batch_size - 1) / std::max<size_t>(batch_size, 1);
  auto all_reached = [&]() {
    for (size_t i : selected) {
      double ratio = static_cast<double>(tracker.updates[i]) /
                     static_cast<double>(tracker.iterations);
      if (ratio < tracker.theta) return false;
    }
    return true;
  };

  uint64_t step = 0;
  for (size_t epoch = 0; epoch < max_epochs; ++epoch) {
    for (size_t bi = 0; bi < steps_per_epoch; ++bi, ++step) {
      Batch batch = next_batch(data, batch_size, step);
      // Mask and quantization off while catching up the under-trained set.
      auto back = backward_with_context(net, batch, config.loss, {});
      if (!std::isfinite(back.loss)) throw NonFiniteLoss("fine-tune loss is non-finite");
      std::vector<double> w = net.flat_weights();
      for (size_t i = 0; i < w.size(); ++i) {
        if (!is_selected[i]) continue;  // frozen weights stay bit-identical
        double next = w[i] - config.eta * back.grad[i];
        if (next != w[i]) {
          w[i] = next;
          tracker.updates[i] += 1;
        }
      }
      net.set_flat_weights(w);
      tracker.iterations += 1;
      if (all_reached()) return;
    }
  }
}

}  // namespace nexume::dynfit
