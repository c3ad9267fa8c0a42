/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "nexume/devmodel.hpp"
#include "nexume/intermittent.hpp"
#include "nexume/tensor.hpp"

namespace nexume::dynfit {

enum class Act { identity, relu, tanh_fn, sigmoid };
enum class LossKind { mse, cross_entropy };

Act act_from_name(const std::string& name);
const char* act_name(Act act);

struct DenseLayer {
  size_t in = 0, out = 0;
  Tensor w;  // out x in
  Tensor b;  // out
};

struct Conv2dLayer {
  size_t in_ch = 0, out_ch = 0, kh = 0, kw = 0;
  Tensor w;  // out_ch x in_ch x kh x kw (flat)
  Tensor b;  // out_ch
};

// Depthwise (full per-channel kernels) followed by a 1x1 pointwise mix. The
// float path carries full kernels; the rank-1 restriction only applies to
// the conv1d-built kernel in kernels::dwsconv2d.
struct DwsConv2dLayer {
  size_t ch = 0, kh = 0, kw = 0, out_ch = 0;
  Tensor dw;  // ch x kh x kw
  Tensor pw;  // ch x out_ch
  Tensor b;   // out_ch
};

struct AvgPoolLayer {
  size_t window = 2;
};

struct ActLayer {
  Act kind = Act::relu;
};

using Layer = std::variant<DenseLayer, Conv2dLayer, DwsConv2dLayer, AvgPoolLayer, ActLayer>;

// Fan-in weight row of one neuron inside the flat parameter vector.
// Pointwise dws neurons have strided rows; everything else is contiguous.
struct NeuronRef {
  size_t layer = 0;
  size_t unit = 0;        // output unit / channel within its stage
  bool depthwise = false; // dws depthwise stage neuron
  size_t weight_offset = 0;
  size_t weight_count = 0;
  size_t weight_stride = 1;
  ptrdiff_t bias_index = -1;  // flat index, -1 when the neuron has no bias
};

struct Network {
  std::vector<size_t> input_shape;
  std::vector<Layer> layers;

  size_t param_count() const;
  size_t neuron_count() const;
  std::vector<NeuronRef> neuron_refs() const;
  // Neuron index range [first, first+count) owned by layer `layer_index`.
  std::pair<size_t, size_t> layer_neuron_span(size_t layer_index) const;

  std::vector<double> flat_weights() const;
  void set_flat_weights(const std::vector<double>& w);

  // Output shape of every layer given input_shape; throws ShapeMismatch if
  // adjacent layers do not compose.
  std::vector<std::vector<size_t>> layer_output_shapes() const;
};

Network make_dense(size_t in, size_t out);
Layer dense_layer(size_t in, size_t out);
Layer conv2d_layer(size_t in_ch, size_t out_ch, size_t kh, size_t kw);
Layer dwsconv2d_layer(size_t ch, size_t kh, size_t kw, size_t out_ch);
Layer avgpool_layer(size_t window);
Layer act_layer(Act act);

// Seeded Xavier-uniform initialization.
void init_weights(Network& net, uint64_t seed);

struct Sample {
  Tensor x;
  Tensor target;  // one-hot / regression target
  int label = 0;
};
using Batch = std::vector<Sample>;

struct Dataset {
  std::vector<Sample> samples;
  size_t num_classes = 0;
};

// Synthetic 4-class 1x8x8 image set (stripes / blob / gradient patterns plus
// Gaussian noise), deterministic in the seed.
Dataset make_fourclass_dataset(size_t n, uint64_t seed, double noise = 0.3);
Dataset load_dataset_csv(const std::string& path, const std::vector<size_t>& input_shape,
                         size_t num_classes);
Batch next_batch(const Dataset& data, size_t batch_size, size_t step);

// ---------------------------------------------------------------------------
// Masked / fake-quantized evaluation

struct EvalOptions {
  // Per-neuron output multiplier; empty = all ones. Hard masks use {0,1},
  // the learned-mask policy passes soft sigmoid values during training.
  std::vector<double> mask;
  // Per-neuron fake-quantization width (16/12/8/4); empty = quantization off.
  std::vector<int> q_bits;
};

Tensor forward(const Network& net, const Tensor& x, const EvalOptions& opts = {});

double loss_value(const Tensor& y, const Sample& s, LossKind kind);

struct BackwardResult {
  std::vector<double> grad;  // d(mean batch loss)/dw, straight-through quantizer
  double loss = 0.0;         // mean batch loss
  std::vector<double> neuron_mask_grad;  // dL/dm_i
  std::vector<double> neuron_taylor;     // batch mean of sum_pos dL/da_i * a_i
};

// Reverse-mode gradients for a whole batch under mask/quant options.
BackwardResult backward_with_context(const Network& net, const Batch& batch, LossKind kind,
                                     const EvalOptions& opts);

// Plain-path gradients for one sample (no mask, no quantization).
std::vector<double> backward(const Network& net, const Sample& sample, LossKind kind);

// ---------------------------------------------------------------------------
// Dropout policies

enum class PolicyKind { l2, obd, fmre, sparse_mask, shapley, taylor, fixed_rate };

PolicyKind policy_kind_from_name(const std::string& name);
const char* policy_kind_name(PolicyKind kind);

struct DropoutPolicy {
  PolicyKind kind = PolicyKind::l2;
  double scale = 0.1;   // alpha / beta / gamma / delta / lambda_t; fixed p for fixed_rate
  double epsilon = 1e-8;
  double p_max = 0.9;
  uint64_t seed = 0;

  // learned-mask state (sparse_mask)
  std::vector<double> z;
  double z_lr = 0.01;

  // shapley controls
  size_t shapley_layer = 0;
  size_t max_exact = 12;
  size_t mc_samples = 64;
};

struct MaskSample {
  std::vector<double> p;
  std::vector<uint8_t> m;
};

std::vector<double> probs_l2(const Network& net, const DropoutPolicy& policy);
std::vector<double> probs_obd(const Network& net, const std::vector<double>& hessian_diag,
                              const DropoutPolicy& policy);
std::vector<double> hessian_diag(const Network& net, const Batch& batch, LossKind kind);
std::vector<double> probs_fmre(const std::vector<std::vector<double>>& feature_maps,
                               const std::vector<std::vector<double>>& reconstructions,
                               const DropoutPolicy& policy);
// Per-neuron feature maps at the current widths vs one width lower.
void fmre_feature_maps(const Network& net, const Batch& batch,
                       const std::vector<int>& q_bits,
                       std::vector<std::vector<double>>& feature_maps,
                       std::vector<std::vector<double>>& reconstructions);

// z <- z - eta * grad_z; returns the soft mask sigma(z).
std::vector<double> sparse_mask_step(std::vector<double>& z,
                                     const std::vector<double>& grad_z, double eta);

// Exact Shapley values over all 2^n coalitions of the loss game; `loss_of`
// receives a bitmask of kept neurons.
std::vector<double> shapley_exact(size_t n, const std::function<double(uint32_t)>& loss_of);
std::vector<double> shapley_monte_carlo(size_t n,
                                        const std::function<double(uint32_t)>& loss_of,
                                        size_t samples, uint64_t seed);

struct ShapleyResult {
  std::vector<double> phi;
  std::vector<double> p;
};
enum class ShapleyMode { automatic, exact, monte_carlo };
ShapleyResult shapley_probs(const Network& net, const Batch& batch, LossKind kind,
                            const DropoutPolicy& policy,
                            ShapleyMode mode = ShapleyMode::automatic);

std::vector<double> probs_taylor(const std::vector<double>& impacts,
                                 const DropoutPolicy& policy);
std::vector<double> taylor_impacts(const Network& net, const Batch& batch, LossKind kind);

MaskSample sample_mask(const std::vector<double>& p, uint64_t seed);

// ---------------------------------------------------------------------------
// Quantization-penalized training

struct QuantAssignment {
  std::vector<int> q_bits;  // per neuron; empty = quantization disabled
  std::vector<double> c;    // per-neuron cost weights; empty = all 1.0
  double lambda = 0.01;

  bool enabled() const { return !q_bits.empty(); }
};

double quant_penalty_loss(double base_loss, const QuantAssignment& quant);

struct UpdateTracker {
  std::vector<uint32_t> updates;  // U_i
  uint32_t iterations = 0;        // T
  double theta = 0.5;

  static UpdateTracker for_network(const Network& net, double theta = 0.5);
};

std::vector<double> update_ratio(const UpdateTracker& tracker);
std::vector<size_t> select_undertrained(const UpdateTracker& tracker);

struct EnergyContext {
  devmodel::HardwareProfile profile;
  double budget_uj = 0.0;
};

struct LayerPlanInfo {
  size_t layer = 0;
  devmodel::KernelKind kind = devmodel::KernelKind::gemm;
  uint64_t l_star = 0;
  size_t quanta_count = 0;
  double total_energy_uj = 0.0;
};

struct TrainConfig {
  double eta = 0.01;
  LossKind loss = LossKind::mse;
  uint64_t seed = 0;
};

struct StepMetrics {
  double loss = 0.0;
  double penalized_loss = 0.0;
  size_t dropped_neurons = 0;
  std::vector<double> p;
  std::vector<uint8_t> mask;
  std::vector<LayerPlanInfo> plans;
};

// One masked, fake-quantized SGD step: computes p via the active policy,
// samples the mask, applies the masked update (dropped neurons provably
// unchanged), bumps the update counters, and re-optimizes the per-layer
// quanta plans when an energy context is given.
StepMetrics train_step(Network& net, const Batch& batch, DropoutPolicy& policy,
                       const QuantAssignment& quant, const EnergyContext* energy,
                       UpdateTracker& tracker, const TrainConfig& config,
                       uint64_t step_index);

// Extra plain training for under-updated weights; weights at or above theta
// are frozen bit-exactly. Stops once every tracked (selected) ratio reaches
// theta or max_epochs elapse.
void finetune(Network& net, UpdateTracker& tracker, const Dataset& data, size_t batch_size,
              size_t max_epochs, const TrainConfig& config);

// Iteration extent / MACs-per-iteration of a layer's kernel loop for one
// input sample, as used by quanta planning and the task scheduler.
struct LayerLoopInfo {
  devmodel::KernelKind kind = devmodel::KernelKind::gemm;
  uint64_t extent = 0;
  uint64_t inner_width = 1;
  uint64_t macs_per_iter = 0;
};
std::optional<LayerLoopInfo> layer_loop_info(const Network& net, size_t layer_index);

// ---------------------------------------------------------------------------
// Model file I/O (JSON, base64 little-endian f32 weights)

inline constexpr int kModelFormatVersion = 1;

struct ModelFile {
  Network net;
  std::vector<int> q_bits;      // optional, empty if absent
  std::vector<double> p_infer;  // optional per-neuron inference dropout
};

std::string model_to_json(const ModelFile& model);
ModelFile model_from_json(const std::string& text);
ModelFile load_model(const std::string& path);
void save_model(const ModelFile& model, const std::string& path);

}  // namespace nexume::dynfit
