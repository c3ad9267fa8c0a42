#include <doctest.h>

#include <json.hpp>

#include "nexume/errors.hpp"
#include "nexume/scheduler.hpp"
#include "test_support.hpp"

using namespace nexume;
using namespace nexume::scheduler;
using testsupport::flat_profile;

namespace {

dynfit::Network three_dense_net(uint64_t seed) {
  dynfit::Network net;
  net.input_shape = {8};
  net.layers.push_back(dynfit::dense_layer(8, 8));
  net.layers.push_back(dynfit::act_layer(dynfit::Act::relu));
  net.layers.push_back(dynfit::dense_layer(8, 8));
  net.layers.push_back(dynfit::act_layer(dynfit::Act::relu));
  net.layers.push_back(dynfit::dense_layer(8, 4));
  dynfit::init_weights(net, seed);
  return net;
}

}  // namespace

TEST_CASE("decompose yields one chained task per weight layer") {
  auto net = three_dense_net(1);
  auto profile = flat_profile();
  auto graph = decompose(net, profile, 50.0, 300.0);
  REQUIRE(graph.tasks.size() == 3);
  CHECK(graph.tasks[0].deps.empty());
  CHECK(graph.tasks[1].deps == std::vector<size_t>{0});
  CHECK(graph.tasks[2].deps == std::vector<size_t>{1});
  CHECK(graph.tasks[0].criticality == doctest::Approx(1.0 / 3.0));
  CHECK(graph.tasks[2].criticality == doctest::Approx(1.0));
  for (const auto& task : graph.tasks) {
    double total = 0.0;
    for (const auto& q : task.plan.quanta) total += q.e_uj;
    CHECK(task.e_est_uj == doctest::Approx(total));
  }
}

TEST_CASE("a single weight layer becomes a single task") {
  dynfit::Network net;
  net.input_shape = {4};
  net.layers.push_back(dynfit::dense_layer(4, 2));
  dynfit::init_weights(net, 2);
  auto graph = decompose(net, flat_profile(), 50.0, 100.0);
  REQUIRE(graph.tasks.size() == 1);
  CHECK(graph.tasks[0].deps.empty());
  CHECK(graph.tasks[0].criticality == doctest::Approx(1.0));
}

TEST_CASE("decompose plans with the optimizer's quanta size") {
  // e_iter = 4 MACs * 500 nJ = 2 uJ; e_ckpt = 3 uJ; budget 11 -> l* = 4.
  dynfit::Network net;
  net.input_shape = {4};
  net.layers.push_back(dynfit::dense_layer(4, 10));
  dynfit::init_weights(net, 3);
  auto profile = flat_profile(500.0, 250.0, 3000.0, 1500.0);
  auto graph = decompose(net, profile, 11.0, 100.0);
  REQUIRE(graph.tasks.size() == 1);
  const auto& plan = graph.tasks[0].plan;
  REQUIRE(plan.quanta.size() == 3);
  CHECK(plan.quanta[0].l == 4);
  CHECK(plan.quanta[1].l == 4);
  CHECK(plan.quanta[2].l == 2);

  // naive mode: one iteration per quanta
  auto naive = decompose(net, profile, 11.0, 100.0, PlanMode::naive_l1);
  CHECK(naive.tasks[0].plan.quanta.size() == 10);

  CHECK_THROWS_AS(decompose(net, profile, 4.0, 100.0), InfeasibleBudget);
}

TEST_CASE("priority favors urgency, criticality, and energy fit") {
  auto net = three_dense_net(4);
  auto graph = decompose(net, flat_profile(), 50.0, 300.0);
  PriorityWeights w;

  Task near = graph.tasks[0];
  near.deadline_ms = 10.0;
  Task far = graph.tasks[0];
  far.deadline_ms = 100.0;
  CHECK(priority(near, 0.0, 1000.0, w) > priority(far, 0.0, 1000.0, w));

  Task low = graph.tasks[0];
  low.criticality = 0.2;
  Task high = graph.tasks[0];
  high.criticality = 0.8;
  CHECK(priority(high, 0.0, 1000.0, w) > priority(low, 0.0, 1000.0, w));

  Task t = graph.tasks[0];
  t.deadline_ms = 10.0;
  t.criticality = 0.5;
  CHECK(priority(t, 0.0, 1e9, w) == doctest::Approx(0.1 + 0.5 + 1.0));

  // Deadline slack floors at 1 ms.
  t.deadline_ms = 0.0;
  CHECK(priority(t, 5.0, 1e9, w) == doctest::Approx(1.0 + 0.5 + 1.0));
}

TEST_CASE("uniformly scaling the priority weights never changes the pick") {
  auto net = three_dense_net(5);
  auto graph = decompose(net, flat_profile(), 50.0, 300.0);
  // Make all three tasks ready so the choice is nontrivial.
  for (auto& t : graph.tasks) t.deps.clear();
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    for (auto& t : graph.tasks) {
      t.deadline_ms = rng.next_uniform(1.0, 500.0);
      t.criticality = rng.next_double();
    }
    std::vector<bool> done(3, false);
    PriorityWeights w{rng.next_uniform(0.1, 3.0), rng.next_uniform(0.1, 3.0),
                      rng.next_uniform(0.1, 3.0)};
    double now = rng.next_uniform(0.0, 50.0);
    double energy = rng.next_uniform(0.0, 50.0);
    size_t base = pick_ready_task(graph, done, now, energy, w);
    for (double c : {0.5, 2.0, 17.0}) {
      PriorityWeights scaled{c * w.w_d, c * w.w_c, c * w.w_e};
      CHECK(pick_ready_task(graph, done, now, energy, scaled) == base);
    }
  }
}

TEST_CASE("abundant energy: no escalations and the continuous prediction") {
  auto net = three_dense_net(7);
  Tensor x({8});
  Rng rng(8);
  for (auto& v : x.data) v = rng.next_uniform(-1, 1);

  InferenceOptions opts;
  opts.deadline_ms = 1e6;
  opts.seed = 9;
  opts.escalation.enabled = true;
  auto trace = ehsim::make_constant_trace(50000.0, 1.0, 0.001);
  auto cap = ehsim::CapacitorState::from_voltage(10e-3, 3.3, 1.8, 3.3);
  auto result = run_inference(net, x, 0, trace, cap, flat_profile(), opts);

  CHECK(result.escalations == 0);
  CHECK(result.restores == 0);
  auto oracle = dynfit::forward(net, x);
  int expected = static_cast<int>(
      std::max_element(oracle.data.begin(), oracle.data.end()) - oracle.data.begin());
  CHECK(result.prediction == expected);
  CHECK(result.slo.latency_ms > 0.0);
  CHECK(result.slo.counted_correct == (result.slo.correct && result.slo.latency_ms <= 1e6));
  CHECK(result.log.conserves_energy());
}

TEST_CASE("a zero deadline can never count as correct") {
  auto net = three_dense_net(10);
  Tensor x({8});
  for (auto& v : x.data) v = 0.5;
  InferenceOptions opts;
  opts.deadline_ms = 0.0;
  opts.seed = 1;
  auto trace = ehsim::make_constant_trace(50000.0, 1.0, 0.001);
  auto cap = ehsim::CapacitorState::from_voltage(10e-3, 3.3, 1.8, 3.3);
  auto result = run_inference(net, x, 0, trace, cap, flat_profile(), opts);
  CHECK_FALSE(result.slo.counted_correct);
}

TEST_CASE("an engineered dip before the last task escalates exactly once") {
  auto net = three_dense_net(11);
  Tensor x({8});
  for (auto& v : x.data) v = 0.25;

  // Task energies: 3.32, 3.32, 3.16 uJ with near-zero harvest. Usable before
  // each task: 12.0, 8.68, 5.36; a 6 uJ threshold trips only the last one.
  auto profile = flat_profile();  // 5 nJ/MAC, ckpt 3 uJ
  InferenceOptions opts;
  opts.deadline_ms = 1e6;
  opts.seed = 2;
  opts.escalation.enabled = true;
  opts.escalation.threshold_uj = 6.0;
  opts.budget_uj = 50.0;
  auto trace = ehsim::make_constant_trace(1.0, 1.0, 0.001);
  auto cap = ehsim::CapacitorState::from_voltage(100e-6, 1.8, 1.8, 3.3);
  cap.max_energy_nj = 20000;
  cap.energy_nj = 12000;
  auto result = run_inference(net, x, 0, trace, cap, profile, opts);
  CHECK(result.escalations == 1);
  size_t esc_events = 0;
  for (const auto& e : result.log.events) {
    if (e.kind == intermittent::EventKind::escalation) ++esc_events;
  }
  CHECK(esc_events == 1);
}

TEST_CASE("pointwise lowering the trace never reduces escalations") {
  auto net = three_dense_net(12);
  Tensor x({8});
  Rng rng(13);
  for (auto& v : x.data) v = rng.next_uniform(-1, 1);
  auto profile = flat_profile();

  auto run_with_power = [&](double scale) {
    InferenceOptions opts;
    opts.deadline_ms = 1e6;
    opts.seed = 14;
    opts.escalation.enabled = true;
    opts.escalation.threshold_uj = 6.0;
    opts.budget_uj = 50.0;
    // Powers high enough that neither run ever waits, so task boundaries
    // land at identical times.
    auto trace = ehsim::make_constant_trace(2000.0 * scale, 1.0, 0.001);
    auto cap = ehsim::CapacitorState::from_voltage(100e-6, 1.8, 1.8, 3.3);
    cap.max_energy_nj = 40000;
    cap.energy_nj = 11000;
    auto result = run_inference(net, x, 0, trace, cap, profile, opts);
    for (const auto& e : result.log.events) {
      CHECK(e.kind != intermittent::EventKind::wait);
    }
    return result.escalations;
  };

  size_t high = run_with_power(1.0);
  size_t mid = run_with_power(0.5);
  size_t low = run_with_power(0.1);
  CHECK(mid >= high);
  CHECK(low >= mid);
}

TEST_CASE("tasks never start before their dependencies complete") {
  auto net = three_dense_net(15);
  Tensor x({8});
  for (auto& v : x.data) v = 0.1;
  InferenceOptions opts;
  opts.deadline_ms = 1e6;
  opts.seed = 3;
  auto trace = ehsim::make_constant_trace(20000.0, 1.0, 0.001);
  auto cap = ehsim::CapacitorState::from_voltage(1e-3, 3.3, 1.8, 3.3);
  auto result = run_inference(net, x, 0, trace, cap, flat_profile(), opts);

  auto graph = decompose(net, flat_profile(), ehsim::nj_to_uj(cap.max_energy_nj),
                         opts.deadline_ms);
  std::vector<double> end_ms(graph.tasks.size(), -1.0);
  for (const auto& run : result.task_runs) {
    for (size_t dep : graph.tasks[run.task_id].deps) {
      CHECK(end_ms[dep] >= 0.0);
      CHECK(end_ms[dep] <= run.start_ms + 1e-9);
    }
    end_ms[run.task_id] = run.end_ms;
  }
}

TEST_CASE("inference starves on a dead trace") {
  auto net = three_dense_net(16);
  Tensor x({8});
  InferenceOptions opts;
  opts.deadline_ms = 1000.0;
  opts.seed = 4;
  opts.max_wait_s = 2.0;
  auto trace = ehsim::make_constant_trace(0.0, 1.0, 0.01);
  auto cap = ehsim::CapacitorState::from_voltage(100e-6, 1.8, 1.8, 3.3);
  CHECK_THROWS_AS(run_inference(net, x, 0, trace, cap, flat_profile(), opts), Starvation);
}

TEST_CASE("the report json carries the documented fields") {
  auto net = three_dense_net(17);
  Tensor x({8});
  for (auto& v : x.data) v = 0.3;
  InferenceOptions opts;
  opts.deadline_ms = 500.0;
  opts.seed = 5;
  auto trace = ehsim::make_constant_trace(50000.0, 1.0, 0.001);
  auto cap = ehsim::CapacitorState::from_voltage(10e-3, 3.3, 1.8, 3.3);
  auto result = run_inference(net, x, 1, trace, cap, flat_profile(), opts);
  auto j = nlohmann::json::parse(report_to_json(result));
  for (const char* key : {"prediction", "correct", "latency_ms", "deadline_ms",
                          "counted_correct", "restores", "escalations",
                          "energy_consumed_uJ"}) {
    CHECK(j.contains(key));
  }
  CHECK(j["counted_correct"].get<bool>() ==
        (j["correct"].get<bool>() && j["latency_ms"].get<double>() <= 500.0));
}
