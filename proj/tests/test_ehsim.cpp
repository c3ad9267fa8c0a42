#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "nexume/ehsim.hpp"
#include "nexume/errors.hpp"
#include "nexume/util.hpp"

using namespace nexume;
using namespace nexume::ehsim;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream out(path);
  out << content;
  return path.string();
}

}  // namespace

TEST_CASE("trace csv parses simple rows") {
  auto trace = parse_trace_csv("t_s,power_uW\n0.0,100\n0.1,100\n");
  CHECK(trace.samples.size() == 2);
  CHECK(trace.sample_interval_s == doctest::Approx(0.1));
  CHECK(trace.samples[1].power_uw == 100.0);
}

TEST_CASE("trace csv accepts a single zero-power row") {
  auto trace = parse_trace_csv("t_s,power_uW\n0.0,0\n");
  CHECK(trace.samples.size() == 1);
  CHECK(trace.sample_interval_s == 1.0);
  CHECK(trace.power_at(4.2) == 0.0);
}

TEST_CASE("trace csv rejects bad input") {
  CHECK_THROWS_AS(parse_trace_csv("t_s,power_uW\n0.1,5\n0.0,5\n"), NonMonotonicTime);
  CHECK_THROWS_AS(parse_trace_csv("t_s,power_uW\n"), EmptyTrace);
  CHECK_THROWS_AS(parse_trace_csv(""), EmptyTrace);
  CHECK_THROWS_AS(parse_trace_csv("t_s,power_uW\nabc,5\n"), ParseError);
  CHECK_THROWS_AS(parse_trace_csv("t_s,power_uW\n0.0\n"), ParseError);
  CHECK_THROWS_AS(parse_trace_csv("wrong,header\n0.0,5\n"), ParseError);
  CHECK_THROWS_AS(parse_trace_csv("t_s,power_uW\n0.0,-5\n"), ParseError);
}

TEST_CASE("load_trace round-trips through a file") {
  auto path = write_temp("nexume_trace_test.csv", "t_s,power_uW\n0,50\n0.5,75\n1,0\n");
  auto trace = load_trace(path);
  CHECK(trace.samples.size() == 3);
  CHECK(trace.samples[1].power_uw == 75.0);
  std::filesystem::remove(path);
}

TEST_CASE("zero-order hold and cyclic replay") {
  auto trace = parse_trace_csv("t_s,power_uW\n0.0,10\n1.0,20\n");
  CHECK(trace.duration_s() == doctest::Approx(2.0));
  CHECK(trace.power_at(0.5) == 10.0);
  CHECK(trace.power_at(1.5) == 20.0);
  CHECK(trace.power_at(2.5) == 10.0);  // wrapped
  CHECK(trace.energy_uj(0.0, 2.0) == doctest::Approx(30.0));
  CHECK(trace.energy_uj(0.0, 4.0) == doctest::Approx(60.0));
  CHECK(trace.energy_uj(1.5, 2.5) == doctest::Approx(15.0));
}

TEST_CASE("usable energy matches the capacitor relation") {
  auto cap = CapacitorState::from_voltage(100e-6, 3.3, 1.8, 5.0);
  CHECK(usable_energy_uj(cap) == doctest::Approx(382.5).epsilon(1e-12));

  auto at_floor = CapacitorState::from_voltage(100e-6, 1.8, 1.8, 5.0);
  CHECK(usable_energy_uj(at_floor) == 0.0);

  auto no_cap = CapacitorState::from_voltage(0.0, 3.3, 1.8, 5.0);
  CHECK(usable_energy_uj(no_cap) == 0.0);
  CHECK(no_cap.v_now() == doctest::Approx(1.8));
}

TEST_CASE("usable energy is monotone in v_now") {
  double prev = -1.0;
  for (double v = 1.8; v <= 3.3; v += 0.1) {
    auto cap = CapacitorState::from_voltage(100e-6, v, 1.8, 3.3);
    CHECK(usable_energy_uj(cap) >= prev);
    prev = usable_energy_uj(cap);
  }
}

TEST_CASE("step credits harvest then debits the draw") {
  auto cap = CapacitorState::from_voltage(100e-6, 3.3, 1.8, 5.0);
  auto trace = parse_trace_csv("t_s,power_uW\n0.0,100\n");
  auto r = step(cap, trace, 0.0, 0.1, 20.0);
  CHECK_FALSE(r.brownout);
  CHECK(usable_energy_uj(r.state) == doctest::Approx(372.5).epsilon(1e-12));
  CHECK(r.harvested_nj == 10000);
  CHECK(r.debited_nj == 20000);
}

TEST_CASE("overdraw floors at zero and signals brownout") {
  auto cap = CapacitorState::from_voltage(100e-6, 1.8, 1.8, 3.3);
  cap.energy_nj = 5000;  // 5 uJ
  auto trace = parse_trace_csv("t_s,power_uW\n0.0,0\n");
  auto r = step(cap, trace, 0.0, 0.1, 20.0);
  CHECK(r.brownout);
  CHECK(r.state.energy_nj == 0);
  CHECK(r.state.v_now() == doctest::Approx(1.8));
  CHECK(r.debited_nj == 5000);
}

TEST_CASE("step with no draw and no power is the identity") {
  auto cap = CapacitorState::from_voltage(220e-6, 2.5, 1.8, 3.3);
  auto trace = parse_trace_csv("t_s,power_uW\n0.0,0\n");
  auto r = step(cap, trace, 0.0, 0.5, 0.0);
  CHECK(r.state == cap);
  CHECK_FALSE(r.brownout);
}

TEST_CASE("harvest clamps at the capacitor ceiling") {
  auto cap = CapacitorState::from_voltage(100e-6, 3.25, 1.8, 3.3);
  auto trace = parse_trace_csv("t_s,power_uW\n0.0,1e7\n");
  auto r = step(cap, trace, 0.0, 1.0, 0.0);
  CHECK(r.state.energy_nj == cap.max_energy_nj);
  CHECK(r.harvested_nj == cap.max_energy_nj - cap.energy_nj);
}

TEST_CASE("replaying a trace is bit-identical") {
  auto trace = make_piezo_trace(5000.0, 0.2, 0.5, 10.0, 0.01, 42);
  auto run = [&]() {
    auto cap = CapacitorState::from_voltage(100e-6, 2.5, 1.8, 3.3);
    std::vector<int64_t> ledger;
    double t = 0.0;
    for (int i = 0; i < 200; ++i) {
      auto r = step(cap, trace, t, 0.01, (i % 7 == 0) ? 3.0 : 0.0);
      cap = r.state;
      t += 0.01;
      ledger.push_back(cap.energy_nj);
    }
    return ledger;
  };
  CHECK(run() == run());
}

TEST_CASE("integer ledger conserves energy exactly") {
  auto trace = make_piezo_trace(8000.0, 0.3, 0.4, 5.0, 0.01, 9);
  auto cap = CapacitorState::from_voltage(47e-6, 2.2, 1.8, 3.3);
  int64_t initial = cap.energy_nj;
  int64_t harvested = 0, debited = 0;
  double t = 0.0;
  for (int i = 0; i < 600; ++i) {
    auto r = step(cap, trace, t, 0.01, (i % 3 == 0) ? 1.7 : 0.0);
    harvested += r.harvested_nj;
    debited += r.debited_nj;
    cap = r.state;
    t += 0.01;
  }
  CHECK(initial + harvested - debited == cap.energy_nj);
  CHECK(debited <= initial + harvested);
}

TEST_CASE("source kind names round trip") {
  CHECK(source_kind_from_name("piezo") == SourceKind::piezo);
  CHECK(source_kind_from_name(source_kind_name(SourceKind::rf_wifi_office)) ==
        SourceKind::rf_wifi_office);
  CHECK_THROWS_AS(source_kind_from_name("nuclear"), ParseError);
}
