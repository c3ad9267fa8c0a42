#include <doctest.h>

#include <cmath>

#include "nexume/errors.hpp"
#include "nexume/nas.hpp"
#include "test_support.hpp"

using namespace nexume;
using namespace nexume::nas;
using testsupport::flat_profile;

namespace {

SearchSpace small_space() {
  SearchSpace space;
  space.depths = {2};
  space.filter_options = {4, 8};
  space.kernel_options = {{3, 3}};
  space.policies = {dynfit::PolicyKind::l2};
  space.input_shape = {1, 8, 8};
  space.num_classes = 4;
  space.pool_window = 2;
  return space;
}

}  // namespace

TEST_CASE("enumeration matches the analytic candidate count") {
  SearchSpace space;
  space.depths = {2, 3};
  space.filter_options = {8, 16};
  space.kernel_options = {{3, 3}, {5, 5}, {5, 3}};
  space.policies = {dynfit::PolicyKind::l2, dynfit::PolicyKind::obd};
  auto candidates = enumerate_space(space);
  // per layer: 2 filters * 3 kernels = 6; (6^2 + 6^3) * 2 policies = 504
  CHECK(analytic_count(space) == 504);
  CHECK(candidates.size() == 504);
  // ids are dense and unique
  for (size_t i = 0; i < candidates.size(); ++i) CHECK(candidates[i].id == i);

  SearchSpace empty;
  empty.depths.clear();
  CHECK_THROWS_AS(enumerate_space(empty), EmptySpace);
}

TEST_CASE("descriptors follow the report format") {
  Candidate c;
  c.depth = 3;
  c.filters = {8, 16, 16};
  c.kernels = {{3, 3}, {3, 3}, {3, 3}};
  c.policy = dynfit::PolicyKind::l2;
  CHECK(candidate_descriptor(c) == "3xCONV2D:8[3x3],16[3x3],16[3x3],AvgPool,L2Drop,FC");

  c.policy = dynfit::PolicyKind::obd;
  c.kernels = {{3, 3}, {5, 3}, {5, 5}};
  CHECK(candidate_descriptor(c) == "3xCONV2D:8[3x3],16[5x3],16[5x5],AvgPool,OBDDrop,FC");
}

TEST_CASE("the 300 ms SLO filter rejects 380 and accepts 260/280") {
  std::vector<Candidate> candidates(3);
  candidates[0].est_latency_ms = 380.0;
  candidates[1].est_latency_ms = 260.0;
  candidates[2].est_latency_ms = 280.0;
  for (auto& c : candidates) {
    c.shape_ok = true;
    c.feasible = c.shape_ok && slo_feasible(c.est_latency_ms, 300.0);
  }
  CHECK_FALSE(candidates[0].feasible);
  CHECK(candidates[1].feasible);
  CHECK(candidates[2].feasible);
}

TEST_CASE("enumerate_and_filter flags feasibility against the SLO") {
  auto space = small_space();
  auto profile = flat_profile();
  auto trace = ehsim::make_constant_trace(5000.0, 1.0, 0.01);
  auto cap = ehsim::CapacitorState::from_voltage(100e-6, 3.3, 1.8, 3.3);

  auto all = enumerate_and_filter(space, profile, trace, cap, 1e12);
  CHECK(all.size() == analytic_count(space));
  for (const auto& c : all) {
    CHECK(c.shape_ok);
    CHECK(c.feasible);  // infinite SLO accepts every composing shape
  }

  // Filter soundness: feasible implies within the SLO.
  for (double slo : {0.5, 2.0, 10.0, 100.0}) {
    auto filtered = enumerate_and_filter(space, profile, trace, cap, slo);
    for (const auto& c : filtered) {
      if (c.feasible) CHECK(c.est_latency_ms <= slo);
    }
  }
}

TEST_CASE("non-composing shapes are flagged, not dropped") {
  SearchSpace space = small_space();
  space.kernel_options = {{5, 5}};  // 8x8 input: two 5x5 convs do not fit
  auto profile = flat_profile();
  auto trace = ehsim::make_constant_trace(5000.0, 1.0, 0.01);
  auto cap = ehsim::CapacitorState::from_voltage(100e-6, 3.3, 1.8, 3.3);
  auto candidates = enumerate_and_filter(space, profile, trace, cap, 1e12);
  CHECK(candidates.size() == analytic_count(space));
  for (const auto& c : candidates) {
    CHECK_FALSE(c.shape_ok);
    CHECK_FALSE(c.feasible);
    CHECK(std::isinf(c.est_latency_ms));
  }
}

TEST_CASE("the latency estimate adds stall time under weak harvests") {
  auto space = small_space();
  auto profile = flat_profile();
  auto cap = ehsim::CapacitorState::from_voltage(100e-6, 1.8, 1.8, 3.3);  // empty
  auto strong = ehsim::make_constant_trace(50000.0, 1.0, 0.01);
  auto weak = ehsim::make_constant_trace(50.0, 1.0, 0.01);
  auto c = enumerate_space(space)[0];
  double fast = estimate_latency_ms(c, space, profile, strong, cap);
  double slow = estimate_latency_ms(c, space, profile, weak, cap);
  CHECK(slow > fast);

  auto full = ehsim::CapacitorState::from_voltage(1.0, 3.3, 1.8, 3.3);
  double no_stall = estimate_latency_ms(c, space, profile, weak, full);
  CHECK(no_stall < slow);
}

TEST_CASE("dominated candidates are rejected as configurations") {
  std::vector<Candidate> cs(3);
  cs[0].est_latency_ms = 380.0;
  cs[0].val_loss = 0.95;
  cs[1].est_latency_ms = 280.0;
  cs[1].val_loss = 0.90;
  cs[2].est_latency_ms = 260.0;
  cs[2].val_loss = 1.40;
  for (auto& c : cs) c.trained = true;
  mark_dominated(cs);
  CHECK(cs[0].rejected_dominated);        // beaten on both axes by cs[1]
  CHECK_FALSE(cs[1].rejected_dominated);
  CHECK_FALSE(cs[2].rejected_dominated);  // fastest; not dominated
}

TEST_CASE("search trains the feasible set and ranks deterministically") {
  auto space = small_space();
  auto profile = flat_profile();
  auto trace = ehsim::make_constant_trace(5000.0, 1.0, 0.01);
  auto cap = ehsim::CapacitorState::from_voltage(100e-6, 3.3, 1.8, 3.3);
  auto data = dynfit::make_fourclass_dataset(80, 19);

  auto filtered = enumerate_and_filter(space, profile, trace, cap, 1e12);
  SearchOptions so;
  so.seed = 5;
  so.train_budget = 20;
  so.batch_size = 8;

  auto ranked1 = search(filtered, space, data, so);
  auto ranked2 = search(filtered, space, data, so);
  REQUIRE(ranked1.size() == ranked2.size());
  for (size_t i = 0; i < ranked1.size(); ++i) {
    CHECK(ranked1[i].id == ranked2[i].id);
    CHECK(ranked1[i].val_loss == ranked2[i].val_loss);  // bit-exact rerun
  }
  for (size_t i = 1; i < ranked1.size(); ++i) {
    if (ranked1[i - 1].trained && ranked1[i].trained) {
      CHECK(ranked1[i - 1].val_loss <= ranked1[i].val_loss);
    }
  }
}

TEST_CASE("fanning search across workers does not change the ranking") {
  auto space = small_space();
  auto profile = flat_profile();
  auto trace = ehsim::make_constant_trace(5000.0, 1.0, 0.01);
  auto cap = ehsim::CapacitorState::from_voltage(100e-6, 3.3, 1.8, 3.3);
  auto data = dynfit::make_fourclass_dataset(48, 71);
  auto filtered = enumerate_and_filter(space, profile, trace, cap, 1e12);
  SearchOptions so;
  so.seed = 9;
  so.train_budget = 10;
  so.batch_size = 8;
  so.threads = 1;
  auto serial = search(filtered, space, data, so);
  so.threads = 4;
  auto parallel = search(filtered, space, data, so);
  REQUIRE(serial.size() == parallel.size());
  for (size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].id == parallel[i].id);
    CHECK(serial[i].val_loss == parallel[i].val_loss);
  }
}

TEST_CASE("zero train budget ranks by the initial loss") {
  auto space = small_space();
  space.filter_options = {4};
  auto profile = flat_profile();
  auto trace = ehsim::make_constant_trace(5000.0, 1.0, 0.01);
  auto cap = ehsim::CapacitorState::from_voltage(100e-6, 3.3, 1.8, 3.3);
  auto data = dynfit::make_fourclass_dataset(40, 23);
  auto filtered = enumerate_and_filter(space, profile, trace, cap, 1e12);
  SearchOptions so;
  so.seed = 6;
  so.train_budget = 0;
  auto ranked = search(filtered, space, data, so);
  for (const auto& c : ranked) {
    CHECK(c.trained);
    CHECK(std::isfinite(c.val_loss));
  }
}

TEST_CASE("an infeasible-only space raises NoFeasibleCandidate") {
  auto space = small_space();
  auto profile = flat_profile();
  auto trace = ehsim::make_constant_trace(5000.0, 1.0, 0.01);
  auto cap = ehsim::CapacitorState::from_voltage(100e-6, 3.3, 1.8, 3.3);
  auto data = dynfit::make_fourclass_dataset(16, 29);
  auto filtered = enumerate_and_filter(space, profile, trace, cap, 1e-9);
  SearchOptions so;
  CHECK_THROWS_AS(search(filtered, space, data, so), NoFeasibleCandidate);
}

TEST_CASE("the report csv carries the four documented columns") {
  auto space = small_space();
  auto profile = flat_profile();
  auto trace = ehsim::make_constant_trace(5000.0, 1.0, 0.01);
  auto cap = ehsim::CapacitorState::from_voltage(100e-6, 3.3, 1.8, 3.3);
  auto candidates = enumerate_and_filter(space, profile, trace, cap, 1e12);
  auto csv = report_csv(candidates);
  CHECK(csv.rfind("descriptor,est_latency_ms,feasible,val_loss\n", 0) == 0);
  CHECK(csv.find("2xCONV2D:4[3x3],4[3x3],AvgPool,L2Drop,FC") != std::string::npos);
  CHECK(csv.find(",true,") != std::string::npos);
}
