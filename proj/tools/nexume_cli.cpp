/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 *
 * Command-line front end. Links only the C API; flags are folded into the
 * JSON override string so scripted sweeps can mix configs and flags.
 */
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nexume.h"

namespace {

using nlohmann::json;

// 0 = ok, 1 = validation error, 2 = runtime error.
int exit_code_of(nex_status status) {
  switch (status) {
    case NEX_OK:
      return 0;
    case NEX_ERR_INVALID:
    case NEX_ERR_PARSE:
    case NEX_ERR_IO:
      return 1;
    default:
      return 2;
  }
}

void log_event(const json& event) {
  std::fprintf(stderr, "%s\n", event.dump().c_str());
}

int fail(nex_status status) {
  log_event({{"event", "error"}, {"message", nex_last_error()}});
  return exit_code_of(status);
}

bool check_file(const std::string& path) {
  if (std::filesystem::exists(path)) return true;
  log_event({{"event", "error"}, {"message", "file not found: " + path}});
  return false;
}

// --seed flag, else NEXUME_SEED, else absent (train/search configs may still
// provide one).
bool resolve_seed(uint64_t flag_seed, bool flag_set, uint64_t& out) {
  if (flag_set) {
    out = flag_seed;
    return true;
  }
  if (const char* env = std::getenv("NEXUME_SEED")) {
    out = std::strtoull(env, nullptr, 10);
    return true;
  }
  return false;
}

struct TraceHandle {
  nex_trace* ptr = nullptr;
  ~TraceHandle() { nex_trace_free(ptr); }
};
struct ProfileHandle {
  nex_profile* ptr = nullptr;
  ~ProfileHandle() { nex_profile_free(ptr); }
};
struct ModelHandle {
  nex_model* ptr = nullptr;
  ~ModelHandle() { nex_model_free(ptr); }
};

nex_status open_profile(const std::string& name_or_path, nex_profile** out) {
  nex_status st = nex_profile_builtin(name_or_path.c_str(), out);
  if (st == NEX_OK) return st;
  if (!std::filesystem::exists(name_or_path)) return NEX_ERR_IO;
  return nex_profile_load(name_or_path.c_str(), out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nexume - intermittent-power neural network simulator"};
  app.require_subcommand(1);

  // profile ------------------------------------------------------------
  auto* profile_cmd = app.add_subcommand("profile", "print a micro-profiling sweep as CSV");
  std::string profile_name = "synth-mid";
  std::string profile_out;
  std::vector<uint64_t> sweep_sizes, sweep_strides;
  profile_cmd->add_option("--profile", profile_name, "builtin name or JSON path");
  profile_cmd->add_option("--out", profile_out, "output CSV (default stdout)");
  profile_cmd->add_option("--sizes", sweep_sizes, "sweep sizes in bytes");
  profile_cmd->add_option("--strides", sweep_strides, "sweep strides in bytes");

  // train --------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "train a model from a JSON config");
  std::string train_config, train_out = "model.json", train_policy;
  uint64_t train_seed = 0;
  bool train_seed_set = false;
  long train_steps = -1;
  train_cmd->add_option("--config", train_config, "experiment config JSON")->required();
  train_cmd->add_option("--out", train_out, "output model path");
  train_cmd->add_option("--seed", train_seed, "PRNG seed")
      ->each([&](const std::string&) { train_seed_set = true; });
  train_cmd->add_option("--policy", train_policy, "dropout policy override");
  train_cmd->add_option("--steps", train_steps, "training steps override");

  // simulate -----------------------------------------------------------
  auto* sim_cmd = app.add_subcommand("simulate", "run one scheduled inference");
  std::string sim_trace, sim_profile, sim_model, sim_out = "report.json";
  std::string sim_plan = "optimized", sim_options;
  double sim_slo_ms = 300.0;
  uint64_t sim_seed = 0;
  bool sim_seed_set = false;
  bool sim_no_escalation = false;
  size_t sim_index = 0;
  sim_cmd->add_option("--trace", sim_trace, "energy trace CSV")->required();
  sim_cmd->add_option("--profile", sim_profile, "hardware profile")->required();
  sim_cmd->add_option("--model", sim_model, "model JSON")->required();
  sim_cmd->add_option("--slo-ms", sim_slo_ms, "latency SLO in ms");
  sim_cmd->add_option("--seed", sim_seed, "PRNG seed")
      ->each([&](const std::string&) { sim_seed_set = true; });
  sim_cmd->add_option("--out", sim_out, "output report path");
  sim_cmd->add_option("--plan", sim_plan, "quanta plan mode: optimized|naive");
  sim_cmd->add_flag("--no-escalation", sim_no_escalation, "disable dropout escalation");
  sim_cmd->add_option("--index", sim_index, "dataset sample index");
  sim_cmd->add_option("--options", sim_options, "extra options JSON");

  // search -------------------------------------------------------------
  auto* search_cmd = app.add_subcommand("search", "enumerate/filter/train candidates");
  std::string search_config, search_out = "search.csv";
  uint64_t search_seed = 0;
  bool search_seed_set = false;
  search_cmd->add_option("--config", search_config, "search config JSON")->required();
  search_cmd->add_option("--out", search_out, "output CSV path");
  search_cmd->add_option("--seed", search_seed, "PRNG seed")
      ->each([&](const std::string&) { search_seed_set = true; });

  // report -------------------------------------------------------------
  auto* report_cmd = app.add_subcommand("report", "merge per-inference reports");
  std::vector<std::string> report_inputs;
  std::string report_out = "summary.json";
  report_cmd->add_option("reports", report_inputs, "report JSON files")->required();
  report_cmd->add_option("--out", report_out, "output summary path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;  // bad flags are a validation error
  }

  if (profile_cmd->parsed()) {
    ProfileHandle profile;
    nex_status st = open_profile(profile_name, &profile.ptr);
    if (st != NEX_OK) return fail(st);
    json opts = json::object();
    if (!sweep_sizes.empty()) opts["sizes_b"] = sweep_sizes;
    if (!sweep_strides.empty()) opts["strides_b"] = sweep_strides;
    std::string opts_text = opts.empty() ? "" : opts.dump();
    st = nex_profile_sweep_csv(profile.ptr, opts_text.empty() ? nullptr : opts_text.c_str(),
                               profile_out.empty() ? nullptr : profile_out.c_str());
    if (st != NEX_OK) return fail(st);
    if (!profile_out.empty()) {
      log_event({{"event", "done"}, {"out", profile_out}});
    }
    return 0;
  }

  if (train_cmd->parsed()) {
    if (!check_file(train_config)) return 1;
    json overrides = json::object();
    uint64_t seed;
    if (resolve_seed(train_seed, train_seed_set, seed)) overrides["seed"] = seed;
    if (!train_policy.empty()) overrides["policy"] = train_policy;
    if (train_steps >= 0) overrides["steps"] = train_steps;
    std::string ov = overrides.empty() ? "" : overrides.dump();
    log_event({{"event", "train_start"}, {"config", train_config}});
    nex_status st = nex_train(train_config.c_str(), ov.empty() ? nullptr : ov.c_str(),
                              train_out.c_str());
    if (st != NEX_OK) return fail(st);
    log_event({{"event", "done"}, {"out", train_out}});
    return 0;
  }

  if (sim_cmd->parsed()) {
    if (!check_file(sim_trace) || !check_file(sim_model)) return 1;
    uint64_t seed;
    if (!resolve_seed(sim_seed, sim_seed_set, seed)) {
      log_event({{"event", "error"},
                 {"message", "seed is mandatory: pass --seed or set NEXUME_SEED"}});
      return 1;
    }
    TraceHandle trace;
    ProfileHandle profile;
    ModelHandle model;
    nex_status st = nex_trace_load(sim_trace.c_str(), &trace.ptr);
    if (st != NEX_OK) return fail(st);
    st = open_profile(sim_profile, &profile.ptr);
    if (st != NEX_OK) return fail(st);
    st = nex_model_load(sim_model.c_str(), &model.ptr);
    if (st != NEX_OK) return fail(st);

    json opts = sim_options.empty() ? json::object() : json::parse(sim_options, nullptr, false);
    if (opts.is_discarded()) {
      log_event({{"event", "error"}, {"message", "--options is not valid JSON"}});
      return 1;
    }
    opts["plan"] = (sim_plan == "naive") ? "naive" : "optimized";
    if (sim_no_escalation) opts["escalation"] = {{"enabled", false}};
    opts["index"] = sim_index;
    std::string opts_text = opts.dump();

    st = nex_simulate(trace.ptr, profile.ptr, model.ptr, sim_slo_ms, seed,
                      opts_text.c_str(), sim_out.c_str());
    if (st != NEX_OK) return fail(st);

    // Mirror the run's event counts on stderr.
    std::ifstream in(sim_out);
    json report = json::parse(in, nullptr, false);
    if (!report.is_discarded()) {
      log_event({{"event", "restore"}, {"count", report.value("restores", 0)}});
      log_event({{"event", "escalation"}, {"count", report.value("escalations", 0)}});
      log_event({{"event", "done"},
                 {"out", sim_out},
                 {"counted_correct", report.value("counted_correct", false)}});
    }
    return 0;
  }

  if (search_cmd->parsed()) {
    if (!check_file(search_config)) return 1;
    json overrides = json::object();
    uint64_t seed;
    if (resolve_seed(search_seed, search_seed_set, seed)) overrides["seed"] = seed;
    std::string ov = overrides.empty() ? "" : overrides.dump();
    log_event({{"event", "search_start"}, {"config", search_config}});
    nex_status st = nex_search(search_config.c_str(), ov.empty() ? nullptr : ov.c_str(),
                               search_out.c_str());
    if (st != NEX_OK) return fail(st);
    log_event({{"event", "done"}, {"out", search_out}});
    return 0;
  }

  if (report_cmd->parsed()) {
    std::vector<const char*> paths;
    for (const auto& p : report_inputs) {
      if (!check_file(p)) return 1;
      paths.push_back(p.c_str());
    }
    nex_status st = nex_report_merge(paths.data(), paths.size(), report_out.c_str());
    if (st != NEX_OK) return fail(st);
    log_event({{"event", "done"}, {"out", report_out}});
    return 0;
  }

  return 1;
}
