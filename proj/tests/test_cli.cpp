#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "nexume/util.hpp"

namespace fs = std::filesystem;

namespace {

const char* cli_path() { return NEXUME_CLI_PATH; }

fs::path work_dir() {
  auto dir = fs::temp_directory_path() / "nexume_cli_test";
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(cli_path()) + " " + args + " 2>/dev/null";
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
  return path.string();
}

std::string small_train_config() {
  nlohmann::json cfg;
  cfg["policy"] = "l2";
  cfg["alpha"] = 0.05;
  cfg["eta"] = 0.02;
  cfg["loss"] = "cross_entropy";
  cfg["steps"] = 25;
  cfg["batch_size"] = 8;
  cfg["data"] = {{"kind", "fourclass"}, {"n", 24}, {"seed", 3}};
  cfg["arch"] = {
      {"input_shape", {1, 8, 8}},
      {"layers",
       {{{"kind", "conv2d"}, {"out_ch", 2}, {"kh", 3}, {"kw", 3}},
        {{"kind", "relu"}},
        {{"kind", "avgpool"}, {"window", 2}},
        {{"kind", "dense"}, {"out", 4}}}}};
  cfg["finetune"] = {{"enabled", false}};
  return cfg.dump(2);
}

std::string bursty_trace_csv() {
  std::string text = "t_s,power_uW\n";
  for (int i = 0; i < 200; ++i) {
    text += std::to_string(i * 0.01) + "," + (i % 5 < 3 ? "9000" : "0") + "\n";
  }
  return text;
}

}  // namespace

TEST_CASE("profile subcommand writes a sweep csv") {
  auto dir = work_dir();
  auto out = (dir / "sweep.csv").string();
  int code = run_cli("profile --profile synth-mid --out " + out);
  CHECK(code == 0);
  auto csv = nexume::read_file(out);
  CHECK(csv.rfind("size_b,stride_b,latency_ns\n", 0) == 0);
}

TEST_CASE("train is reproducible byte for byte") {
  auto dir = work_dir();
  auto cfg = write_file(dir / "train.json", small_train_config());
  auto m1 = (dir / "m1.json").string();
  auto m2 = (dir / "m2.json").string();
  CHECK(run_cli("train --config " + cfg + " --seed 42 --out " + m1) == 0);
  CHECK(run_cli("train --config " + cfg + " --seed 42 --out " + m2) == 0);
  CHECK(nexume::read_file(m1) == nexume::read_file(m2));
}

TEST_CASE("simulate emits the report schema") {
  auto dir = work_dir();
  auto cfg = write_file(dir / "train.json", small_train_config());
  auto model = (dir / "model.json").string();
  REQUIRE(run_cli("train --config " + cfg + " --seed 7 --out " + model) == 0);
  auto trace = write_file(dir / "piezo.csv", bursty_trace_csv());
  auto report = (dir / "report.json").string();
  int code = run_cli("simulate --trace " + trace + " --profile synth-mid --model " +
                     model + " --slo-ms 300 --seed 42 --out " + report);
  CHECK(code == 0);
  auto j = nlohmann::json::parse(nexume::read_file(report));
  CHECK(j.contains("prediction"));
  CHECK(j.contains("counted_correct"));

  // Reruns are byte-identical.
  auto report2 = (dir / "report2.json").string();
  REQUIRE(run_cli("simulate --trace " + trace + " --profile synth-mid --model " + model +
                  " --slo-ms 300 --seed 42 --out " + report2) == 0);
  CHECK(nexume::read_file(report) == nexume::read_file(report2));

  auto summary = (dir / "summary.json").string();
  CHECK(run_cli("report --out " + summary + " " + report + " " + report2) == 0);
  auto s = nlohmann::json::parse(nexume::read_file(summary));
  CHECK(s["count"] == 2);
}

TEST_CASE("a missing trace file exits with the validation code") {
  auto dir = work_dir();
  auto cfg = write_file(dir / "train.json", small_train_config());
  auto model = (dir / "model.json").string();
  REQUIRE(run_cli("train --config " + cfg + " --seed 7 --out " + model) == 0);
  int code = run_cli("simulate --trace " + (dir / "nope.csv").string() +
                     " --profile synth-mid --model " + model +
                     " --slo-ms 300 --seed 1 --out " + (dir / "r.json").string());
  CHECK(code == 1);
}

TEST_CASE("a missing seed is a validation error unless NEXUME_SEED is set") {
  auto dir = work_dir();
  auto cfg = write_file(dir / "train.json", small_train_config());
  auto model = (dir / "model.json").string();
  REQUIRE(run_cli("train --config " + cfg + " --seed 7 --out " + model) == 0);
  auto trace = write_file(dir / "piezo.csv", bursty_trace_csv());

  std::string base = "simulate --trace " + trace + " --profile synth-mid --model " +
                     model + " --slo-ms 300 --out " + (dir / "r_env.json").string();
  // No --seed and no env: validation failure.
  unsetenv("NEXUME_SEED");
  CHECK(run_cli(base) == 1);
  // Env fallback works.
  setenv("NEXUME_SEED", "99", 1);
  CHECK(run_cli(base) == 0);
  unsetenv("NEXUME_SEED");
}

TEST_CASE("unknown subcommands exit with the validation code") {
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("") == 1);
}

TEST_CASE("energy starvation exits with the runtime code and no partial output") {
  auto dir = work_dir();
  auto cfg = write_file(dir / "train.json", small_train_config());
  auto model = (dir / "model.json").string();
  REQUIRE(run_cli("train --config " + cfg + " --seed 7 --out " + model) == 0);
  auto dead = write_file(dir / "dead.csv", "t_s,power_uW\n0,0\n0.01,0\n");
  auto out = (dir / "starved.json").string();
  fs::remove(out);
  int code = run_cli("simulate --trace " + dead + " --profile synth-mid --model " +
                     model + " --slo-ms 300 --seed 1 --out " + out +
                     " --options '{\"capacitor\":{\"v_now\":1.8},\"max_wait_s\":2}'");
  CHECK(code == 2);
  CHECK_FALSE(fs::exists(out));  // atomic write contract: nothing partial
}

TEST_CASE("search subcommand writes the candidate csv") {
  auto dir = work_dir();
  nlohmann::json cfg;
  cfg["space"] = {{"depths", {2}},
                  {"filters", {4}},
                  {"kernels", {"3x3"}},
                  {"policies", {"l2"}},
                  {"input_shape", {1, 8, 8}},
                  {"classes", 4}};
  cfg["train_budget"] = 5;
  cfg["batch_size"] = 8;
  cfg["slo_ms"] = 1e9;
  cfg["data"] = {{"kind", "fourclass"}, {"n", 16}, {"seed", 4}};
  auto cfg_path = write_file(dir / "search.json", cfg.dump());
  auto out = (dir / "search.csv").string();
  CHECK(run_cli("search --config " + cfg_path + " --seed 2 --out " + out) == 0);
  CHECK(nexume::read_file(out).rfind("descriptor,", 0) == 0);
}
