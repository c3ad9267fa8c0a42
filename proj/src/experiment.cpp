/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "nexume/experiment.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "nexume/errors.hpp"
#include "nexume/nas.hpp"
#include "nexume/rng.hpp"
#include "nexume/util.hpp"

namespace nexume::experiment {

namespace {

using nlohmann::json;

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string(what) + ": " + e.what());
  }
}

// File config with key-by-key overrides (overrides win).
json merged_config(const std::string& config_json, const std::string& overrides_json) {
  json cfg = config_json.empty() ? json::object() : parse_json(config_json, "config");
  if (!cfg.is_object()) throw ConfigError("config must be a JSON object");
  if (!overrides_json.empty()) {
    json ov = parse_json(overrides_json, "overrides");
    for (auto it = ov.begin(); it != ov.end(); ++it) cfg[it.key()] = it.value();
  }
  return cfg;
}

dynfit::LossKind loss_from_name(const std::string& name) {
  if (name == "mse") return dynfit::LossKind::mse;
  if (name == "cross_entropy") return dynfit::LossKind::cross_entropy;
  throw ConfigError("unknown loss: " + name);
}

// Network from an inline arch spec; in-dims are inferred layer by layer.
dynfit::Network network_from_arch(const json& arch) {
  dynfit::Network net;
  net.input_shape = arch.at("input_shape").get<std::vector<size_t>>();
  std::vector<size_t> cur = net.input_shape;
  for (const auto& lj : arch.at("layers")) {
    std::string kind = lj.at("kind").get<std::string>();
    if (kind == "dense") {
      size_t in = shape_size(cur);
      size_t out = lj.at("out").get<size_t>();
      net.layers.push_back(dynfit::dense_layer(in, out));
      cur = {out};
    } else if (kind == "conv2d") {
      if (cur.size() != 3) throw ConfigError("conv2d needs a CxHxW input");
      size_t oc = lj.at("out_ch").get<size_t>();
      size_t kh = lj.at("kh").get<size_t>();
      size_t kw = lj.at("kw").get<size_t>();
      net.layers.push_back(dynfit::conv2d_layer(cur[0], oc, kh, kw));
      cur = {oc, cur[1] - kh + 1, cur[2] - kw + 1};
    } else if (kind == "dwsconv2d") {
      if (cur.size() != 3) throw ConfigError("dwsconv2d needs a CxHxW input");
      size_t oc = lj.at("out_ch").get<size_t>();
      size_t kh = lj.at("kh").get<size_t>();
      size_t kw = lj.at("kw").get<size_t>();
      net.layers.push_back(dynfit::dwsconv2d_layer(cur[0], kh, kw, oc));
      cur = {oc, cur[1] - kh + 1, cur[2] - kw + 1};
    } else if (kind == "avgpool") {
      size_t w = lj.at("window").get<size_t>();
      net.layers.push_back(dynfit::avgpool_layer(w));
      cur = {cur[0], cur[1] / w, cur[2] / w};
    } else if (kind == "relu" || kind == "tanh" || kind == "sigmoid" ||
               kind == "identity") {
      net.layers.push_back(dynfit::act_layer(dynfit::act_from_name(kind)));
    } else if (kind == "activation") {
      net.layers.push_back(
          dynfit::act_layer(dynfit::act_from_name(lj.at("act").get<std::string>())));
    } else {
      throw ConfigError("unknown arch layer kind: " + kind);
    }
  }
  net.layer_output_shapes();
  return net;
}

dynfit::DropoutPolicy policy_from_config(const json& cfg, uint64_t seed) {
  dynfit::DropoutPolicy policy;
  policy.kind = dynfit::policy_kind_from_name(cfg.value("policy", "l2"));
  switch (policy.kind) {
    case dynfit::PolicyKind::l2: policy.scale = cfg.value("alpha", 0.1); break;
    case dynfit::PolicyKind::obd: policy.scale = cfg.value("beta", 0.1); break;
    case dynfit::PolicyKind::fmre: policy.scale = cfg.value("gamma", 0.1); break;
    case dynfit::PolicyKind::shapley: policy.scale = cfg.value("delta", 0.1); break;
    case dynfit::PolicyKind::taylor: policy.scale = cfg.value("lambda_taylor", 0.1); break;
    case dynfit::PolicyKind::fixed_rate: policy.scale = cfg.value("fixed_p", 0.2); break;
    case dynfit::PolicyKind::sparse_mask: break;
  }
  policy.epsilon = cfg.value("epsilon", 1e-8);
  policy.p_max = cfg.value("p_max", 0.9);
  policy.z_lr = cfg.value("z_lr", 0.01);
  policy.shapley_layer = cfg.value("shapley_layer", 0);
  policy.max_exact = cfg.value("shapley_max_exact", 12);
  policy.mc_samples = cfg.value("shapley_mc_samples", 64);
  policy.seed = mix_seed(seed, 0x5eed);
  return policy;
}

}  // namespace

devmodel::HardwareProfile resolve_profile(const std::string& name_or_path) {
  for (const auto& name : devmodel::builtin_profile_names()) {
    if (name == name_or_path) return devmodel::builtin_profile(name);
  }
  return devmodel::load_profile(name_or_path);
}

dynfit::Dataset resolve_dataset(const std::string& spec_json,
                                const std::vector<size_t>& input_shape) {
  json spec = parse_json(spec_json, "data spec");
  std::string kind = spec.value("kind", "fourclass");
  if (kind == "fourclass") {
    size_t n = spec.value("n", 256);
    uint64_t seed = spec.value("seed", 7);
    double noise = spec.value("noise", 0.3);
    return dynfit::make_fourclass_dataset(n, seed, noise);
  }
  if (kind == "csv") {
    return dynfit::load_dataset_csv(spec.at("path").get<std::string>(), input_shape,
                                    spec.at("classes").get<size_t>());
  }
  throw ConfigError("unknown data kind: " + kind);
}

ehsim::CapacitorState capacitor_from_json(const std::string& json_or_empty) {
  double c_f = 100e-6, v_min = 1.8, v_max = 3.3, eff = 1.0;
  double v_now = -1.0;
  if (!json_or_empty.empty()) {
    json j = parse_json(json_or_empty, "capacitor");
    c_f = j.value("capacitance_f", c_f);
    v_min = j.value("v_min", v_min);
    v_max = j.value("v_max", v_max);
    eff = j.value("efficiency", eff);
    v_now = j.value("v_now", v_now);
  }
  if (v_now < 0.0) v_now = v_max;
  return ehsim::CapacitorState::from_voltage(c_f, v_now, v_min, v_max, eff);
}

TrainOutcome run_train(const std::string& config_json, const std::string& overrides_json) {
  json cfg = merged_config(config_json, overrides_json);
  if (!cfg.contains("seed")) {
    throw ConfigError("seed is mandatory (set it in the config, --seed, or NEXUME_SEED)");
  }
  uint64_t seed = cfg.at("seed").get<uint64_t>();

  dynfit::Network net;
  if (cfg.contains("model") && cfg.at("model").is_string()) {
    net = dynfit::load_model(cfg.at("model").get<std::string>()).net;
  } else if (cfg.contains("arch")) {
    net = network_from_arch(cfg.at("arch"));
    dynfit::init_weights(net, seed);
  } else {
    throw ConfigError("config needs either `model` (path) or `arch`");
  }

  auto data = resolve_dataset(cfg.value("data", json({{"kind", "fourclass"}})).dump(),
                              net.input_shape);

  dynfit::TrainConfig tc;
  tc.eta = cfg.value("eta", 0.01);
  tc.loss = loss_from_name(cfg.value("loss", "cross_entropy"));
  tc.seed = seed;

  dynfit::DropoutPolicy policy = policy_from_config(cfg, seed);

  size_t neurons = net.neuron_count();
  dynfit::QuantAssignment quant;
  quant.lambda = cfg.value("lambda", 0.01);
  if (cfg.contains("quant_bits")) {
    if (cfg.at("quant_bits").is_array()) {
      quant.q_bits = cfg.at("quant_bits").get<std::vector<int>>();
    } else {
      int bits = cfg.at("quant_bits").get<int>();
      if (bits != 0) quant.q_bits.assign(neurons, bits);
    }
  } else {
    quant.q_bits.assign(neurons, 16);
  }
  if (cfg.contains("c")) {
    if (cfg.at("c").is_array()) quant.c = cfg.at("c").get<std::vector<double>>();
    else quant.c.assign(neurons, cfg.at("c").get<double>());
  }

  std::optional<dynfit::EnergyContext> energy;
  if (cfg.contains("budget_uj")) {
    dynfit::EnergyContext ctx;
    ctx.profile = resolve_profile(cfg.value("profile", "synth-mid"));
    ctx.budget_uj = cfg.at("budget_uj").get<double>();
    energy = ctx;
  }

  size_t steps = cfg.value("steps", 200);
  size_t batch_size = cfg.value("batch_size", 16);
  double theta = cfg.value("theta", 0.5);
  auto tracker = dynfit::UpdateTracker::for_network(net, theta);

  TrainOutcome outcome;
  std::vector<double> last_p(neurons, 0.0);
  for (size_t step = 0; step < steps; ++step) {
    auto batch = dynfit::next_batch(data, batch_size, step);
    auto metrics = dynfit::train_step(net, batch, policy, quant,
                                      energy ? &*energy : nullptr, tracker, tc, step);
    outcome.final_loss = metrics.loss;
    last_p = metrics.p;
  }
  outcome.steps = steps;

  if (cfg.contains("finetune") && cfg.at("finetune").value("enabled", true)) {
    size_t max_epochs = cfg.at("finetune").value("max_epochs", 10);
    dynfit::finetune(net, tracker, data, batch_size, max_epochs, tc);
  }

  outcome.model.net = std::move(net);
  outcome.model.q_bits = quant.q_bits;
  outcome.model.p_infer = last_p;
  return outcome;
}

scheduler::InferenceResult run_simulate(const ehsim::EnergyTrace& trace,
                                        const devmodel::HardwareProfile& profile,
                                        const dynfit::ModelFile& model, double slo_ms,
                                        uint64_t seed, const std::string& options_json) {
  json opts = options_json.empty() ? json::object() : parse_json(options_json, "options");

  auto data = resolve_dataset(opts.value("data", json({{"kind", "fourclass"}})).dump(),
                              model.net.input_shape);
  size_t index = opts.value("index", 0);
  if (index >= data.samples.size()) throw ConfigError("sample index out of range");
  const auto& sample = data.samples[index];

  scheduler::InferenceOptions io;
  io.deadline_ms = slo_ms;
  io.seed = seed;
  io.plan_mode = (opts.value("plan", "optimized") == "naive") ? scheduler::PlanMode::naive_l1
                                                              : scheduler::PlanMode::optimized;
  if (opts.contains("escalation")) {
    const auto& e = opts.at("escalation");
    io.escalation.enabled = e.value("enabled", true);
    io.escalation.threshold_uj = e.value("threshold_uj", -1.0);
    io.escalation.factor = e.value("factor", 1.5);
    io.escalation.step_down_q = e.value("step_down_q", false);
  }
  io.budget_uj = opts.value("budget_uj", -1.0);
  io.max_wait_s = opts.value("max_wait_s", 3600.0);
  io.p_base = model.p_infer;
  io.q_bits = model.q_bits;

  auto capacitor = capacitor_from_json(
      opts.contains("capacitor") ? opts.at("capacitor").dump() : std::string());

  return scheduler::run_inference(model.net, sample.x, sample.label, trace, capacitor,
                                  profile, io);
}

std::string run_search(const std::string& config_json, const std::string& overrides_json) {
  json cfg = merged_config(config_json, overrides_json);
  if (!cfg.contains("seed")) {
    throw ConfigError("seed is mandatory (set it in the config, --seed, or NEXUME_SEED)");
  }

  nas::SearchSpace space;
  if (cfg.contains("space")) {
    const auto& sj = cfg.at("space");
    if (sj.contains("depths")) space.depths = sj.at("depths").get<std::vector<size_t>>();
    if (sj.contains("filters")) {
      space.filter_options = sj.at("filters").get<std::vector<size_t>>();
    }
    if (sj.contains("kernels")) {
      space.kernel_options.clear();
      for (const auto& k : sj.at("kernels")) {
        std::string s = k.get<std::string>();
        size_t x = s.find('x');
        if (x == std::string::npos) throw ConfigError("kernel spec must look like `3x3`");
        space.kernel_options.push_back(
            {std::stoul(s.substr(0, x)), std::stoul(s.substr(x + 1))});
      }
    }
    if (sj.contains("policies")) {
      space.policies.clear();
      for (const auto& p : sj.at("policies")) {
        space.policies.push_back(dynfit::policy_kind_from_name(p.get<std::string>()));
      }
    }
    if (sj.contains("input_shape")) {
      space.input_shape = sj.at("input_shape").get<std::vector<size_t>>();
    }
    if (sj.contains("classes")) space.num_classes = sj.at("classes").get<size_t>();
    if (sj.contains("pool_window")) space.pool_window = sj.at("pool_window").get<size_t>();
  }

  auto profile = resolve_profile(cfg.value("profile", "synth-mid"));
  ehsim::EnergyTrace trace;
  if (cfg.contains("trace")) {
    trace = ehsim::load_trace(cfg.at("trace").get<std::string>());
  } else {
    trace = ehsim::make_constant_trace(10000.0, 10.0, 0.01);
  }
  auto capacitor = capacitor_from_json(
      cfg.contains("capacitor") ? cfg.at("capacitor").dump() : std::string());
  double slo_ms = cfg.value("slo_ms", 300.0);

  auto candidates = nas::enumerate_and_filter(space, profile, trace, capacitor, slo_ms);

  auto data = resolve_dataset(cfg.value("data", json({{"kind", "fourclass"}})).dump(),
                              space.input_shape);
  nas::SearchOptions so;
  so.seed = cfg.at("seed").get<uint64_t>();
  so.train_budget = cfg.value("train_budget", 100);
  so.batch_size = cfg.value("batch_size", 16);
  so.eta = cfg.value("eta", 0.01);
  so.loss = loss_from_name(cfg.value("loss", "cross_entropy"));
  so.threads = cfg.value("threads", 1);
  auto ranked = nas::search(candidates, space, data, so);
  return nas::report_csv(ranked);
}

std::string merge_reports(const std::vector<std::string>& report_paths) {
  size_t n = 0, correct = 0, counted = 0, restores = 0, escalations = 0;
  double latency_sum = 0.0, energy_sum = 0.0;
  for (const auto& path : report_paths) {
    json j = parse_json(read_file(path), "report");
    ++n;
    if (j.value("correct", false)) ++correct;
    if (j.value("counted_correct", false)) ++counted;
    restores += j.value("restores", 0);
    escalations += j.value("escalations", 0);
    latency_sum += j.value("latency_ms", 0.0);
    energy_sum += j.value("energy_consumed_uJ", 0.0);
  }
  if (n == 0) throw InvalidArgument("no reports to merge");
  json out;
  out["count"] = n;
  out["correct"] = correct;
  out["counted_correct"] = counted;
  out["slo_accuracy"] = static_cast<double>(counted) / static_cast<double>(n);
  out["mean_latency_ms"] = latency_sum / static_cast<double>(n);
  out["total_restores"] = restores;
  out["total_escalations"] = escalations;
  out["total_energy_uJ"] = energy_sum;
  return out.dump(2) + "\n";
}

}  // namespace nexume::experiment
