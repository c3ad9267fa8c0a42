/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "nexume/dynfit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <json.hpp>

#include "nexume/errors.hpp"
#include "nexume/kernels.hpp"
#include "nexume/rng.hpp"
#include "nexume/util.hpp"

namespace nexume::dynfit {

namespace {

size_t layer_param_count(const Layer& layer) {
  if (const auto* d = std::get_if<DenseLayer>(&layer)) return d->in * d->out + d->out;
  if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
    return c->out_ch * c->in_ch * c->kh * c->kw + c->out_ch;
  }
  if (const auto* s = std::get_if<DwsConv2dLayer>(&layer)) {
    return s->ch * s->kh * s->kw + s->ch * s->out_ch + s->out_ch;
  }
  return 0;
}

size_t layer_neuron_count(const Layer& layer) {
  if (const auto* d = std::get_if<DenseLayer>(&layer)) return d->out;
  if (const auto* c = std::get_if<Conv2dLayer>(&layer)) return c->out_ch;
  if (const auto* s = std::get_if<DwsConv2dLayer>(&layer)) return s->ch + s->out_ch;
  return 0;
}

}  // namespace

Act act_from_name(const std::string& name) {
  if (name == "identity") return Act::identity;
  if (name == "relu") return Act::relu;
  if (name == "tanh") return Act::tanh_fn;
  if (name == "sigmoid") return Act::sigmoid;
  throw ParseError("unknown activation: " + name);
}

const char* act_name(Act act) {
  switch (act) {
    case Act::identity: return "identity";
    case Act::relu: return "relu";
    case Act::tanh_fn: return "tanh";
    case Act::sigmoid: return "sigmoid";
  }
  return "identity";
}

PolicyKind policy_kind_from_name(const std::string& name) {
  if (name == "l2") return PolicyKind::l2;
  if (name == "obd") return PolicyKind::obd;
  if (name == "fmre") return PolicyKind::fmre;
  if (name == "sparse_mask") return PolicyKind::sparse_mask;
  if (name == "shapley") return PolicyKind::shapley;
  if (name == "taylor") return PolicyKind::taylor;
  if (name == "fixed_rate") return PolicyKind::fixed_rate;
  throw ParseError("unknown dropout policy: " + name);
}

const char* policy_kind_name(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::l2: return "l2";
    case PolicyKind::obd: return "obd";
    case PolicyKind::fmre: return "fmre";
    case PolicyKind::sparse_mask: return "sparse_mask";
    case PolicyKind::shapley: return "shapley";
    case PolicyKind::taylor: return "taylor";
    case PolicyKind::fixed_rate: return "fixed_rate";
  }
  return "l2";
}

size_t Network::param_count() const {
  size_t n = 0;
  for (const auto& l : layers) n += layer_param_count(l);
  return n;
}

size_t Network::neuron_count() const {
  size_t n = 0;
  for (const auto& l : layers) n += layer_neuron_count(l);
  return n;
}

std::pair<size_t, size_t> Network::layer_neuron_span(size_t layer_index) const {
  size_t first = 0;
  for (size_t i = 0; i < layer_index; ++i) first += layer_neuron_count(layers[i]);
  return {first, layer_neuron_count(layers[layer_index])};
}

std::vector<NeuronRef> Network::neuron_refs() const {
  std::vector<NeuronRef> refs;
  size_t offset = 0;
  for (size_t li = 0; li < layers.size(); ++li) {
    const Layer& layer = layers[li];
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      size_t w_off = offset;
      size_t b_off = offset + d->in * d->out;
      for (size_t j = 0; j < d->out; ++j) {
        refs.push_back({li, j, false, w_off + j * d->in, d->in, 1,
                        static_cast<ptrdiff_t>(b_off + j)});
      }
    } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
      size_t per = c->in_ch * c->kh * c->kw;
      size_t w_off = offset;
      size_t b_off = offset + c->out_ch * per;
      for (size_t o = 0; o < c->out_ch; ++o) {
        refs.push_back({li, o, false, w_off + o * per, per, 1,
                        static_cast<ptrdiff_t>(b_off + o)});
      }
    } else if (const auto* s = std::get_if<DwsConv2dLayer>(&layer)) {
      size_t dwper = s->kh * s->kw;
      size_t dw_off = offset;
      size_t pw_off = offset + s->ch * dwper;
      size_t b_off = pw_off + s->ch * s->out_ch;
      for (size_t c2 = 0; c2 < s->ch; ++c2) {
        refs.push_back({li, c2, true, dw_off + c2 * dwper, dwper, 1, -1});
      }
      for (size_t k = 0; k < s->out_ch; ++k) {
        refs.push_back({li, k, false, pw_off + k, s->ch, s->out_ch,
                        static_cast<ptrdiff_t>(b_off + k)});
      }
    }
    offset += layer_param_count(layer);
  }
  return refs;
}

std::vector<double> Network::flat_weights() const {
  std::vector<double> out;
  out.reserve(param_count());
  for (const auto& layer : layers) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      out.insert(out.end(), d->w.data.begin(), d->w.data.end());
      out.insert(out.end(), d->b.data.begin(), d->b.data.end());
    } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
      out.insert(out.end(), c->w.data.begin(), c->w.data.end());
      out.insert(out.end(), c->b.data.begin(), c->b.data.end());
    } else if (const auto* s = std::get_if<DwsConv2dLayer>(&layer)) {
      out.insert(out.end(), s->dw.data.begin(), s->dw.data.end());
      out.insert(out.end(), s->pw.data.begin(), s->pw.data.end());
      out.insert(out.end(), s->b.data.begin(), s->b.data.end());
    }
  }
  return out;
}

void Network::set_flat_weights(const std::vector<double>& w) {
  if (w.size() != param_count()) throw ShapeMismatch("flat weight vector length mismatch");
  size_t pos = 0;
  auto take = [&](Tensor& t) {
    std::copy(w.begin() + pos, w.begin() + pos + t.size(), t.data.begin());
    pos += t.size();
  };
  for (auto& layer : layers) {
    if (auto* d = std::get_if<DenseLayer>(&layer)) {
      take(d->w);
      take(d->b);
    } else if (auto* c = std::get_if<Conv2dLayer>(&layer)) {
      take(c->w);
      take(c->b);
    } else if (auto* s = std::get_if<DwsConv2dLayer>(&layer)) {
      take(s->dw);
      take(s->pw);
      take(s->b);
    }
  }
}

std::vector<std::vector<size_t>> Network::layer_output_shapes() const {
  std::vector<std::vector<size_t>> shapes;
  std::vector<size_t> cur = input_shape;
  for (const auto& layer : layers) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      if (shape_size(cur) != d->in) {
        throw ShapeMismatch("dense layer input size does not match");
      }
      cur = {d->out};
    } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
      if (cur.size() != 3 || cur[0] != c->in_ch || cur[1] < c->kh || cur[2] < c->kw) {
        throw ShapeMismatch("conv2d layer does not compose with its input");
      }
      cur = {c->out_ch, cur[1] - c->kh + 1, cur[2] - c->kw + 1};
    } else if (const auto* s = std::get_if<DwsConv2dLayer>(&layer)) {
      if (cur.size() != 3 || cur[0] != s->ch || cur[1] < s->kh || cur[2] < s->kw) {
        throw ShapeMismatch("dwsconv2d layer does not compose with its input");
      }
      cur = {s->out_ch, cur[1] - s->kh + 1, cur[2] - s->kw + 1};
    } else if (const auto* p = std::get_if<AvgPoolLayer>(&layer)) {
      if (cur.size() != 3 || cur[1] < p->window || cur[2] < p->window) {
        throw ShapeMismatch("avgpool layer does not compose with its input");
      }
      cur = {cur[0], cur[1] / p->window, cur[2] / p->window};
    }
    shapes.push_back(cur);
  }
  return shapes;
}

Layer dense_layer(size_t in, size_t out) {
  DenseLayer d;
  d.in = in;
  d.out = out;
  d.w = Tensor({out, in});
  d.b = Tensor({out});
  return d;
}

Layer conv2d_layer(size_t in_ch, size_t out_ch, size_t kh, size_t kw) {
  Conv2dLayer c;
  c.in_ch = in_ch;
  c.out_ch = out_ch;
  c.kh = kh;
  c.kw = kw;
  c.w = Tensor({out_ch, in_ch, kh, kw});
  c.b = Tensor({out_ch});
  return c;
}

Layer dwsconv2d_layer(size_t ch, size_t kh, size_t kw, size_t out_ch) {
  DwsConv2dLayer s;
  s.ch = ch;
  s.kh = kh;
  s.kw = kw;
  s.out_ch = out_ch;
  s.dw = Tensor({ch, kh, kw});
  s.pw = Tensor({ch, out_ch});
  s.b = Tensor({out_ch});
  return s;
}

Layer avgpool_layer(size_t window) { return AvgPoolLayer{window}; }
Layer act_layer(Act act) { return ActLayer{act}; }

Network make_dense(size_t in, size_t out) {
  Network net;
  net.input_shape = {in};
  net.layers.push_back(dense_layer(in, out));
  return net;
}

void init_weights(Network& net, uint64_t seed) {
  Rng rng(seed);
  auto fill = [&](Tensor& t, double limit) {
    for (auto& v : t.data) v = rng.next_uniform(-limit, limit);
  };
  for (auto& layer : net.layers) {
    if (auto* d = std::get_if<DenseLayer>(&layer)) {
      fill(d->w, std::sqrt(6.0 / static_cast<double>(d->in + d->out)));
      std::fill(d->b.data.begin(), d->b.data.end(), 0.0);
    } else if (auto* c = std::get_if<Conv2dLayer>(&layer)) {
      double fan = static_cast<double>((c->in_ch + c->out_ch) * c->kh * c->kw);
      fill(c->w, std::sqrt(6.0 / fan));
      std::fill(c->b.data.begin(), c->b.data.end(), 0.0);
    } else if (auto* s = std::get_if<DwsConv2dLayer>(&layer)) {
      fill(s->dw, std::sqrt(6.0 / static_cast<double>(2 * s->kh * s->kw)));
      fill(s->pw, std::sqrt(6.0 / static_cast<double>(s->ch + s->out_ch)));
      std::fill(s->b.data.begin(), s->b.data.end(), 0.0);
    }
  }
}

Dataset make_fourclass_dataset(size_t n, uint64_t seed, double noise) {
  Dataset data;
  data.num_classes = 4;
  Rng rng(seed);
  for (size_t idx = 0; idx < n; ++idx) {
    int label = static_cast<int>(idx % 4);
    Tensor x({1, 8, 8});
    for (size_t i = 0; i < 8; ++i) {
      for (size_t j = 0; j < 8; ++j) {
        double v = 0.0;
        switch (label) {
          case 0: v = (j % 2 == 0) ? 1.0 : -1.0; break;
          case 1: v = (i % 2 == 0) ? 1.0 : -1.0; break;
          case 2: {
            double di = static_cast<double>(i) - 3.5;
            double dj = static_cast<double>(j) - 3.5;
            v = 2.0 * std::exp(-(di * di + dj * dj) / 6.0) - 0.5;
            break;
          }
          default:
            v = (static_cast<double>(i) + static_cast<double>(j)) / 7.0 - 1.0;
        }
        x.at(0, i, j) = v + noise * rng.next_gaussian();
      }
    }
    Tensor target({4});
    target.data[static_cast<size_t>(label)] = 1.0;
    data.samples.push_back({std::move(x), std::move(target), label});
  }
  return data;
}

Dataset load_dataset_csv(const std::string& path, const std::vector<size_t>& input_shape,
                         size_t num_classes) {
  std::string text = read_file(path);
  Dataset data;
  data.num_classes = num_classes;
  size_t features = shape_size(input_shape);
  size_t start = 0;
  bool first = true;
  while (start < text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    start = end + 1;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("label,", 0) == 0) continue;  // header
    }
    std::vector<double> vals;
    size_t pos = 0;
    while (pos <= line.size()) {
      size_t comma = line.find(',', pos);
      if (comma == std::string::npos) comma = line.size();
      try {
        vals.push_back(std::stod(line.substr(pos, comma - pos)));
      } catch (const std::exception&) {
        throw ParseError("dataset row has a non-numeric field");
      }
      pos = comma + 1;
    }
    if (vals.size() != features + 1) {
      throw ParseError("dataset row has " + std::to_string(vals.size() - 1) +
                       " features, expected " + std::to_string(features));
    }
    Sample s;
    s.label = static_cast<int>(vals[0]);
    if (s.label < 0 || static_cast<size_t>(s.label) >= num_classes) {
      throw ParseError("dataset label out of range");
    }
    s.x = Tensor(input_shape, std::vector<double>(vals.begin() + 1, vals.end()));
    s.target = Tensor({num_classes});
    s.target.data[static_cast<size_t>(s.label)] = 1.0;
    data.samples.push_back(std::move(s));
  }
  if (data.samples.empty()) throw ParseError("dataset file has no rows");
  return data;
}

Batch next_batch(const Dataset& data, size_t batch_size, size_t step) {
  Batch batch;
  size_t n = data.samples.size();
  for (size_t i = 0; i < batch_size; ++i) {
    batch.push_back(data.samples[(step * batch_size + i) % n]);
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

struct LayerTape {
  Tensor input;
  Tensor premask;    // weight layers: output before the neuron mask
  Tensor output;
  Tensor eff_w;      // fake-quantized weights actually used
  Tensor eff_dw, eff_pw;
  Tensor dw_pre, dw_masked;  // dws intermediate planes
};

double apply_act(Act act, double v) {
  switch (act) {
    case Act::identity: return v;
    case Act::relu: return v > 0.0 ? v : 0.0;
    case Act::tanh_fn: return std::tanh(v);
    case Act::sigmoid: return 1.0 / (1.0 + std::exp(-v));
  }
  return v;
}

double act_grad_from_cache(Act act, double in, double out) {
  switch (act) {
    case Act::identity: return 1.0;
    case Act::relu: return in > 0.0 ? 1.0 : 0.0;
    case Act::tanh_fn: return 1.0 - out * out;
    case Act::sigmoid: return out * (1.0 - out);
  }
  return 1.0;
}

// Fake-quantize one fan-in row in place inside `w` (already copied). The
// row scale is its max magnitude; an all-zero row is left untouched.
void fake_quant_row(std::vector<double>& w, size_t offset, size_t count, size_t stride,
                    int bits) {
  double scale = 0.0;
  for (size_t i = 0; i < count; ++i) {
    scale = std::max(scale, std::fabs(w[offset + i * stride]));
  }
  if (scale <= 0.0 || !std::isfinite(scale)) return;
  for (size_t i = 0; i < count; ++i) {
    size_t idx = offset + i * stride;
    w[idx] = kernels::quantize_value(w[idx], bits, scale);
  }
}

struct EvalPlumbing {
  const Network* net;
  std::vector<NeuronRef> refs;
  std::vector<size_t> layer_neuron_first;  // per layer
  std::vector<size_t> layer_param_offset;  // per layer
  size_t total_params = 0;
  size_t total_neurons = 0;

  explicit EvalPlumbing(const Network& n) : net(&n), refs(n.neuron_refs()) {
    size_t noff = 0, poff = 0;
    for (const auto& layer : n.layers) {
      layer_neuron_first.push_back(noff);
      layer_param_offset.push_back(poff);
      noff += layer_neuron_count(layer);
      poff += layer_param_count(layer);
    }
    total_params = poff;
    total_neurons = noff;
  }
};

double mask_of(const EvalOptions& opts, size_t neuron) {
  if (opts.mask.empty()) return 1.0;
  return opts.mask[neuron];
}

void check_opts(const EvalOptions& opts, size_t neurons) {
  if (!opts.mask.empty() && opts.mask.size() != neurons) {
    throw ShapeMismatch("mask length does not match the network neuron count");
  }
  if (!opts.q_bits.empty() && opts.q_bits.size() != neurons) {
    throw ShapeMismatch("q assignment length does not match the neuron count");
  }
}

// Effective (fake-quantized) parameter vector for one layer's weight
// tensor(s); biases are never quantized.
void build_effective_weights(const EvalPlumbing& pl, size_t li, const EvalOptions& opts,
                             LayerTape& tape) {
  const Layer& layer = pl.net->layers[li];
  if (const auto* d = std::get_if<DenseLayer>(&layer)) {
    tape.eff_w = d->w;
    if (!opts.q_bits.empty()) {
      size_t first = pl.layer_neuron_first[li];
      for (size_t j = 0; j < d->out; ++j) {
        fake_quant_row(tape.eff_w.data, j * d->in, d->in, 1, opts.q_bits[first + j]);
      }
    }
  } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
    tape.eff_w = c->w;
    if (!opts.q_bits.empty()) {
      size_t first = pl.layer_neuron_first[li];
      size_t per = c->in_ch * c->kh * c->kw;
      for (size_t o = 0; o < c->out_ch; ++o) {
        fake_quant_row(tape.eff_w.data, o * per, per, 1, opts.q_bits[first + o]);
      }
    }
  } else if (const auto* s = std::get_if<DwsConv2dLayer>(&layer)) {
    tape.eff_dw = s->dw;
    tape.eff_pw = s->pw;
    if (!opts.q_bits.empty()) {
      size_t first = pl.layer_neuron_first[li];
      size_t dwper = s->kh * s->kw;
      for (size_t c2 = 0; c2 < s->ch; ++c2) {
        fake_quant_row(tape.eff_dw.data, c2 * dwper, dwper, 1, opts.q_bits[first + c2]);
      }
      for (size_t k = 0; k < s->out_ch; ++k) {
        fake_quant_row(tape.eff_pw.data, k, s->ch, s->out_ch,
                       opts.q_bits[first + s->ch + k]);
      }
    }
  }
}

Tensor layer_forward(const EvalPlumbing& pl, size_t li, const Tensor& in,
                     const EvalOptions& opts, LayerTape& tape) {
  const Layer& layer = pl.net->layers[li];
  tape.input = in;
  build_effective_weights(pl, li, opts, tape);
  size_t nfirst = pl.layer_neuron_first[li];

  if (const auto* d = std::get_if<DenseLayer>(&layer)) {
    if (in.size() != d->in) throw ShapeMismatch("dense input size mismatch");
    Tensor pre({d->out});
    for (size_t j = 0; j < d->out; ++j) {
      double acc = d->b.data[j];
      const double* row = tape.eff_w.data.data() + j * d->in;
      for (size_t i = 0; i < d->in; ++i) acc += row[i] * in.data[i];
      pre.data[j] = acc;
    }
    tape.premask = pre;
    Tensor out = pre;
    for (size_t j = 0; j < d->out; ++j) out.data[j] *= mask_of(opts, nfirst + j);
    tape.output = out;
    return out;
  }

  if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
    if (in.shape.size() != 3 || in.shape[0] != c->in_ch) {
      throw ShapeMismatch("conv2d input shape mismatch");
    }
    size_t h = in.shape[1], w = in.shape[2];
    if (h < c->kh || w < c->kw) throw ShapeMismatch("conv2d kernel larger than input");
    size_t oh = h - c->kh + 1, ow = w - c->kw + 1;
    Tensor pre({c->out_ch, oh, ow});
    size_t per = c->in_ch * c->kh * c->kw;
    for (size_t o = 0; o < c->out_ch; ++o) {
      const double* wo = tape.eff_w.data.data() + o * per;
      for (size_t i = 0; i < oh; ++i) {
        for (size_t j = 0; j < ow; ++j) {
          double acc = c->b.data[o];
          for (size_t ci = 0; ci < c->in_ch; ++ci) {
            for (size_t a = 0; a < c->kh; ++a) {
              for (size_t b2 = 0; b2 < c->kw; ++b2) {
                acc += wo[(ci * c->kh + a) * c->kw + b2] * in.at(ci, i + a, j + b2);
              }
            }
          }
          pre.at(o, i, j) = acc;
        }
      }
    }
    tape.premask = pre;
    Tensor out = pre;
    for (size_t o = 0; o < c->out_ch; ++o) {
      double m = mask_of(opts, nfirst + o);
      for (size_t i = 0; i < oh; ++i) {
        for (size_t j = 0; j < ow; ++j) out.at(o, i, j) *= m;
      }
    }
    tape.output = out;
    return out;
  }

  if (const auto* s = std::get_if<DwsConv2dLayer>(&layer)) {
    if (in.shape.size() != 3 || in.shape[0] != s->ch) {
      throw ShapeMismatch("dwsconv2d input shape mismatch");
    }
    size_t h = in.shape[1], w = in.shape[2];
    if (h < s->kh || w < s->kw) throw ShapeMismatch("dwsconv2d kernel larger than input");
    size_t oh = h - s->kh + 1, ow = w - s->kw + 1;
    Tensor dw_pre({s->ch, oh, ow});
    for (size_t c2 = 0; c2 < s->ch; ++c2) {
      for (size_t i = 0; i < oh; ++i) {
        for (size_t j = 0; j < ow; ++j) {
          double acc = 0.0;
          for (size_t a = 0; a < s->kh; ++a) {
            for (size_t b2 = 0; b2 < s->kw; ++b2) {
              acc += tape.eff_dw.at(c2, a, b2) * in.at(c2, i + a, j + b2);
            }
          }
          dw_pre.at(c2, i, j) = acc;
        }
      }
    }
    tape.dw_pre = dw_pre;
    Tensor dw_masked = dw_pre;
    for (size_t c2 = 0; c2 < s->ch; ++c2) {
      double m = mask_of(opts, nfirst + c2);
      for (size_t i = 0; i < oh; ++i) {
        for (size_t j = 0; j < ow; ++j) dw_masked.at(c2, i, j) *= m;
      }
    }
    tape.dw_masked = dw_masked;
    Tensor pre({s->out_ch, oh, ow});
    for (size_t k = 0; k < s->out_ch; ++k) {
      for (size_t i = 0; i < oh; ++i) {
        for (size_t j = 0; j < ow; ++j) {
          double acc = s->b.data[k];
          for (size_t c2 = 0; c2 < s->ch; ++c2) {
            acc += dw_masked.at(c2, i, j) * tape.eff_pw.at(c2, k);
          }
          pre.at(k, i, j) = acc;
        }
      }
    }
    tape.premask = pre;
    Tensor out = pre;
    for (size_t k = 0; k < s->out_ch; ++k) {
      double m = mask_of(opts, nfirst + s->ch + k);
      for (size_t i = 0; i < oh; ++i) {
        for (size_t j = 0; j < ow; ++j) out.at(k, i, j) *= m;
      }
    }
    tape.output = out;
    return out;
  }

  if (const auto* p = std::get_if<AvgPoolLayer>(&layer)) {
    if (in.shape.size() != 3) throw ShapeMismatch("avgpool expects a CxHxW input");
    size_t ch = in.shape[0], h = in.shape[1], w = in.shape[2];
    size_t win = p->window;
    if (h < win || w < win) throw ShapeMismatch("avgpool window larger than input");
    Tensor out({ch, h / win, w / win});
    double inv = 1.0 / static_cast<double>(win * win);
    for (size_t c2 = 0; c2 < ch; ++c2) {
      for (size_t i = 0; i < h / win; ++i) {
        for (size_t j = 0; j < w / win; ++j) {
          double acc = 0.0;
          for (size_t a = 0; a < win; ++a) {
            for (size_t b2 = 0; b2 < win; ++b2) {
              acc += in.at(c2, i * win + a, j * win + b2);
            }
          }
          out.at(c2, i, j) = acc * inv;
        }
      }
    }
    tape.output = out;
    return out;
  }

  const auto& a = std::get<ActLayer>(layer);
  Tensor out = in;
  for (auto& v : out.data) v = apply_act(a.kind, v);
  tape.output = out;
  return out;
}

// Backward for one layer; returns gradient wrt the layer input. Accumulates
// into flat weight grads plus per-neuron mask/taylor statistics.
Tensor layer_backward(const EvalPlumbing& pl, size_t li, const LayerTape& tape,
                      const Tensor& g_out, const EvalOptions& opts,
                      std::vector<double>& grad, std::vector<double>& mask_grad,
                      std::vector<double>& taylor) {
  const Layer& layer = pl.net->layers[li];
  size_t nfirst = pl.layer_neuron_first[li];
  size_t poff = pl.layer_param_offset[li];
  const Tensor& in = tape.input;

  if (const auto* d = std::get_if<DenseLayer>(&layer)) {
    Tensor g_in(in.shape);  // dense flattens; hand back the caller's shape
    size_t b_off = poff + d->in * d->out;
    for (size_t j = 0; j < d->out; ++j) {
      double g = g_out.data[j];
      double m = mask_of(opts, nfirst + j);
      mask_grad[nfirst + j] += g * tape.premask.data[j];
      taylor[nfirst + j] += g * tape.output.data[j];
      double gp = g * m;
      grad[b_off + j] += gp;
      const double* row = tape.eff_w.data.data() + j * d->in;
      for (size_t i = 0; i < d->in; ++i) {
        grad[poff + j * d->in + i] += gp * in.data[i];
        g_in.data[i] += gp * row[i];
      }
    }
    return g_in;
  }

  if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
    size_t oh = g_out.shape[1], ow = g_out.shape[2];
    Tensor g_in(in.shape);
    size_t per = c->in_ch * c->kh * c->kw;
    size_t b_off = poff + c->out_ch * per;
    for (size_t o = 0; o < c->out_ch; ++o) {
      double m = mask_of(opts, nfirst + o);
      const double* wo = tape.eff_w.data.data() + o * per;
      for (size_t i = 0; i < oh; ++i) {
        for (size_t j = 0; j < ow; ++j) {
          double g = g_out.at(o, i, j);
          mask_grad[nfirst + o] += g * tape.premask.at(o, i, j);
          taylor[nfirst + o] += g * tape.output.at(o, i, j);
          double gp = g * m;
          if (gp == 0.0) continue;
          grad[b_off + o] += gp;
          for (size_t ci = 0; ci < c->in_ch; ++ci) {
            for (size_t a = 0; a < c->kh; ++a) {
              for (size_t b2 = 0; b2 < c->kw; ++b2) {
                grad[poff + o * per + (ci * c->kh + a) * c->kw + b2] +=
                    gp * in.at(ci, i + a, j + b2);
                g_in.at(ci, i + a, j + b2) += gp * wo[(ci * c->kh + a) * c->kw + b2];
              }
            }
          }
        }
      }
    }
    return g_in;
  }

  if (const auto* s = std::get_if<DwsConv2dLayer>(&layer)) {
    size_t oh = g_out.shape[1], ow = g_out.shape[2];
    size_t dwper = s->kh * s->kw;
    size_t dw_off = poff;
    size_t pw_off = poff + s->ch * dwper;
    size_t b_off = pw_off + s->ch * s->out_ch;

    // Pointwise stage.
    Tensor g_dw_masked({s->ch, oh, ow});
    for (size_t k = 0; k < s->out_ch; ++k) {
      double m = mask_of(opts, nfirst + s->ch + k);
      for (size_t i = 0; i < oh; ++i) {
        for (size_t j = 0; j < ow; ++j) {
          double g = g_out.at(k, i, j);
          mask_grad[nfirst + s->ch + k] += g * tape.premask.at(k, i, j);
          taylor[nfirst + s->ch + k] += g * tape.output.at(k, i, j);
          double gp = g * m;
          if (gp == 0.0) continue;
          grad[b_off + k] += gp;
          for (size_t c2 = 0; c2 < s->ch; ++c2) {
            grad[pw_off + c2 * s->out_ch + k] += gp * tape.dw_masked.at(c2, i, j);
            g_dw_masked.at(c2, i, j) += gp * tape.eff_pw.at(c2, k);
          }
        }
      }
    }

    // Depthwise stage.
    Tensor g_in(in.shape);
    for (size_t c2 = 0; c2 < s->ch; ++c2) {
      double m = mask_of(opts, nfirst + c2);
      for (size_t i = 0; i < oh; ++i) {
        for (size_t j = 0; j < ow; ++j) {
          double g = g_dw_masked.at(c2, i, j);
          mask_grad[nfirst + c2] += g * tape.dw_pre.at(c2, i, j);
          taylor[nfirst + c2] += g * tape.dw_masked.at(c2, i, j);
          double gp = g * m;
          if (gp == 0.0) continue;
          for (size_t a = 0; a < s->kh; ++a) {
            for (size_t b2 = 0; b2 < s->kw; ++b2) {
              grad[dw_off + c2 * dwper + a * s->kw + b2] += gp * in.at(c2, i + a, j + b2);
              g_in.at(c2, i + a, j + b2) += gp * tape.eff_dw.at(c2, a, b2);
            }
          }
        }
      }
    }
    return g_in;
  }

  if (const auto* p = std::get_if<AvgPoolLayer>(&layer)) {
    Tensor g_in(in.shape);
    size_t win = p->window;
    size_t oh = g_out.shape[1], ow = g_out.shape[2];
    double inv = 1.0 / static_cast<double>(win * win);
    for (size_t c2 = 0; c2 < in.shape[0]; ++c2) {
      for (size_t i = 0; i < oh; ++i) {
        for (size_t j = 0; j < ow; ++j) {
          double g = g_out.at(c2, i, j) * inv;
          for (size_t a = 0; a < win; ++a) {
            for (size_t b2 = 0; b2 < win; ++b2) {
              g_in.at(c2, i * win + a, j * win + b2) += g;
            }
          }
        }
      }
    }
    return g_in;
  }

  const auto& a = std::get<ActLayer>(layer);
  Tensor g_in(in.shape);
  for (size_t i = 0; i < in.size(); ++i) {
    g_in.data[i] = g_out.data[i] * act_grad_from_cache(a.kind, in.data[i], tape.output.data[i]);
  }
  return g_in;
}

Tensor loss_grad(const Tensor& y, const Sample& s, LossKind kind) {
  if (kind == LossKind::mse) {
    if (y.size() != s.target.size()) throw ShapeMismatch("target size mismatch");
    Tensor g = y;
    for (size_t i = 0; i < y.size(); ++i) g.data[i] = y.data[i] - s.target.data[i];
    return g;
  }
  // cross-entropy with softmax
  Tensor g = y;
  double mx = *std::max_element(y.data.begin(), y.data.end());
  double denom = 0.0;
  for (double v : y.data) denom += std::exp(v - mx);
  for (size_t i = 0; i < y.size(); ++i) {
    g.data[i] = std::exp(y.data[i] - mx) / denom;
  }
  g.data[static_cast<size_t>(s.label)] -= 1.0;
  return g;
}

}  // namespace

Tensor forward(const Network& net, const Tensor& x, const EvalOptions& opts) {
  EvalPlumbing pl(net);
  check_opts(opts, pl.total_neurons);
  Tensor cur = x;
  LayerTape tape;
  for (size_t li = 0; li < net.layers.size(); ++li) {
    cur = layer_forward(pl, li, cur, opts, tape);
  }
  return cur;
}

double loss_value(const Tensor& y, const Sample& s, LossKind kind) {
  if (kind == LossKind::mse) {
    if (y.size() != s.target.size()) throw ShapeMismatch("target size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
      double d = y.data[i] - s.target.data[i];
      acc += d * d;
    }
    return 0.5 * acc;
  }
  double mx = *std::max_element(y.data.begin(), y.data.end());
  double denom = 0.0;
  for (double v : y.data) denom += std::exp(v - mx);
  return -(y.data[static_cast<size_t>(s.label)] - mx - std::log(denom));
}

BackwardResult backward_with_context(const Network& net, const Batch& batch, LossKind kind,
                                     const EvalOptions& opts) {
  if (batch.empty()) throw InvalidArgument("batch must be non-empty");
  EvalPlumbing pl(net);
  check_opts(opts, pl.total_neurons);
  BackwardResult result;
  result.grad.assign(pl.total_params, 0.0);
  result.neuron_mask_grad.assign(pl.total_neurons, 0.0);
  result.neuron_taylor.assign(pl.total_neurons, 0.0);

  std::vector<LayerTape> tapes(net.layers.size());
  for (const Sample& s : batch) {
    Tensor cur = s.x;
    for (size_t li = 0; li < net.layers.size(); ++li) {
      cur = layer_forward(pl, li, cur, opts, tapes[li]);
    }
    result.loss += loss_value(cur, s, kind);
    Tensor g = loss_grad(cur, s, kind);
    for (size_t li = net.layers.size(); li-- > 0;) {
      g = layer_backward(pl, li, tapes[li], g, opts, result.grad,
                         result.neuron_mask_grad, result.neuron_taylor);
    }
  }
  double inv = 1.0 / static_cast<double>(batch.size());
  result.loss *= inv;
  for (auto& g : result.grad) g *= inv;
  for (auto& g : result.neuron_mask_grad) g *= inv;
  for (auto& g : result.neuron_taylor) g *= inv;
  return result;
}

std::vector<double> backward(const Network& net, const Sample& sample, LossKind kind) {
  Batch b{sample};
  return backward_with_context(net, b, kind, {}).grad;
}

// ---------------------------------------------------------------------------
// Model file I/O

namespace {

std::string tensor_b64(const Tensor& t) {
  std::vector<uint8_t> bytes;
  bytes.reserve(t.size() * 4);
  for (double v : t.data) put_f32(bytes, static_cast<float>(v));
  return base64_encode(bytes.data(), bytes.size());
}

void tensor_from_b64(Tensor& t, const std::string& text) {
  std::vector<uint8_t> bytes = base64_decode(text);
  if (bytes.size() != t.size() * 4) {
    throw ParseError("model weight blob has the wrong length");
  }
  ByteReader r(bytes.data(), bytes.size());
  for (auto& v : t.data) v = static_cast<double>(r.f32());
}

}  // namespace

std::string model_to_json(const ModelFile& model) {
  nlohmann::json j;
  j["format_version"] = kModelFormatVersion;
  j["input_shape"] = model.net.input_shape;
  auto layers = nlohmann::json::array();
  for (const auto& layer : model.net.layers) {
    nlohmann::json lj;
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      lj["kind"] = "dense";
      lj["in"] = d->in;
      lj["out"] = d->out;
      lj["w"] = tensor_b64(d->w);
      lj["b"] = tensor_b64(d->b);
    } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
      lj["kind"] = "conv2d";
      lj["in_ch"] = c->in_ch;
      lj["out_ch"] = c->out_ch;
      lj["kh"] = c->kh;
      lj["kw"] = c->kw;
      lj["w"] = tensor_b64(c->w);
      lj["b"] = tensor_b64(c->b);
    } else if (const auto* s = std::get_if<DwsConv2dLayer>(&layer)) {
      lj["kind"] = "dwsconv2d";
      lj["ch"] = s->ch;
      lj["kh"] = s->kh;
      lj["kw"] = s->kw;
      lj["out_ch"] = s->out_ch;
      lj["dw"] = tensor_b64(s->dw);
      lj["pw"] = tensor_b64(s->pw);
      lj["b"] = tensor_b64(s->b);
    } else if (const auto* p = std::get_if<AvgPoolLayer>(&layer)) {
      lj["kind"] = "avgpool";
      lj["window"] = p->window;
    } else {
      lj["kind"] = "activation";
      lj["act"] = act_name(std::get<ActLayer>(layer).kind);
    }
    layers.push_back(lj);
  }
  j["layers"] = layers;
  if (!model.q_bits.empty()) j["q_bits"] = model.q_bits;
  if (!model.p_infer.empty()) j["p_infer"] = model.p_infer;
  return j.dump(2) + "\n";
}

ModelFile model_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("model JSON: ") + e.what());
  }
  ModelFile m;
  try {
    if (j.at("format_version").get<int>() != kModelFormatVersion) {
      throw VersionMismatch("unsupported model format version");
    }
    m.net.input_shape = j.at("input_shape").get<std::vector<size_t>>();
    for (const auto& lj : j.at("layers")) {
      std::string kind = lj.at("kind").get<std::string>();
      if (kind == "dense") {
        Layer layer = dense_layer(lj.at("in").get<size_t>(), lj.at("out").get<size_t>());
        auto& d = std::get<DenseLayer>(layer);
        tensor_from_b64(d.w, lj.at("w").get<std::string>());
        tensor_from_b64(d.b, lj.at("b").get<std::string>());
        m.net.layers.push_back(std::move(layer));
      } else if (kind == "conv2d") {
        Layer layer = conv2d_layer(lj.at("in_ch").get<size_t>(), lj.at("out_ch").get<size_t>(),
                                   lj.at("kh").get<size_t>(), lj.at("kw").get<size_t>());
        auto& c = std::get<Conv2dLayer>(layer);
        tensor_from_b64(c.w, lj.at("w").get<std::string>());
        tensor_from_b64(c.b, lj.at("b").get<std::string>());
        m.net.layers.push_back(std::move(layer));
      } else if (kind == "dwsconv2d") {
        Layer layer = dwsconv2d_layer(lj.at("ch").get<size_t>(), lj.at("kh").get<size_t>(),
                                      lj.at("kw").get<size_t>(), lj.at("out_ch").get<size_t>());
        auto& s = std::get<DwsConv2dLayer>(layer);
        tensor_from_b64(s.dw, lj.at("dw").get<std::string>());
        tensor_from_b64(s.pw, lj.at("pw").get<std::string>());
        tensor_from_b64(s.b, lj.at("b").get<std::string>());
        m.net.layers.push_back(std::move(layer));
      } else if (kind == "avgpool") {
        m.net.layers.push_back(avgpool_layer(lj.at("window").get<size_t>()));
      } else if (kind == "activation") {
        m.net.layers.push_back(act_layer(act_from_name(lj.at("act").get<std::string>())));
      } else {
        throw ParseError("unknown layer kind: " + kind);
      }
    }
    if (j.contains("q_bits")) m.q_bits = j.at("q_bits").get<std::vector<int>>();
    if (j.contains("p_infer")) m.p_infer = j.at("p_infer").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model JSON: ") + e.what());
  }
  m.net.layer_output_shapes();  // composition check
  if (!m.q_bits.empty() && m.q_bits.size() != m.net.neuron_count()) {
    throw ParseError("model q_bits length does not match the neuron count");
  }
  if (!m.p_infer.empty() && m.p_infer.size() != m.net.neuron_count()) {
    throw ParseError("model p_infer length does not match the neuron count");
  }
  return m;
}

ModelFile load_model(const std::string& path) { return model_from_json(read_file(path)); }

void save_model(const ModelFile& model, const std::string& path) {
  atomic_write_file(path, model_to_json(model));
}

}  // namespace nexume::dynfit
